use approx::assert_relative_eq;
use mlqe_core::families::{ExponentialModel, FamilyModel, GlmLink, GlmModel, MvnModel};
use mlqe_core::lq::{lq_likelihood, solve_mlqe, weighted_score, weighted_score_jacobian, DistortionParam, SolverOptions};
use mlqe_core::Param;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(v: f64) -> DistortionParam {
    DistortionParam::new(v).unwrap()
}

/// Central-difference Jacobian of the weighted score against the analytic one.
fn jacobian_error<M: FamilyModel>(model: &M, sample: &[M::Obs], theta: &Param, qq: DistortionParam) -> f64 {
    let j = weighted_score_jacobian(sample, model, theta, qq).unwrap();
    let mut fd = DMatrix::zeros(theta.len(), theta.len());
    for k in 0..theta.len() {
        let h = 1e-6 * theta[k].abs().max(1.0);
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[k] += h;
        dn[k] -= h;
        let col = (weighted_score(sample, model, &up, qq).unwrap() - weighted_score(sample, model, &dn, qq).unwrap())
            / (2.0 * h);
        fd.set_column(k, &col);
    }
    (fd - &j).amax() / j.amax()
}

#[test]
fn score_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let qq = q(rng.random_range(0.6..1.3));
        let s = ExponentialModel.sample(&Param::from_element(1, 1.5), 25, &mut rng).unwrap();
        assert!(jacobian_error(&ExponentialModel, &s, &Param::from_element(1, 1.1), qq) < 1e-6);

        let mvn = MvnModel::new(3).unwrap();
        let sigma = DMatrix::from_fn(3, 3, |i, j| 0.4f64.powi((i as i32 - j as i32).abs()));
        let truth = mvn.pack(&DVector::from_vec(vec![0.5, -1.0, 0.0]), &sigma);
        let s = mvn.sample(&truth, 30, &mut rng).unwrap();
        let theta = mvn.pack(&DVector::from_vec(vec![0.4, -0.9, 0.1]), &(sigma * 1.2));
        assert!(jacobian_error(&mvn, &s, &theta, qq) < 1e-6);

        for link in [GlmLink::Logistic, GlmLink::ExpReg] {
            let m = GlmModel::new(link, 3).unwrap();
            let beta = Param::from_vec(vec![0.8, -0.5, 0.3]);
            let s = m.sample(&beta, 40, &mut rng).unwrap();
            assert!(jacobian_error(&m, &s, &(beta * 0.9), qq) < 1e-6);
        }
    }
}

#[test]
fn exponential_sampler_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lambda = 2.5;
    let s = ExponentialModel.sample(&Param::from_element(1, lambda), 200_000, &mut rng).unwrap();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    // Mean SE is 1/(λ√n); variance SE is about √8/(λ²√n).
    assert!((mean - 1.0 / lambda).abs() < 4.0 / (lambda * n.sqrt()));
    assert!((var - 1.0 / (lambda * lambda)).abs() < 4.0 * 8f64.sqrt() / (lambda * lambda * n.sqrt()));
}

#[test]
fn mvn_sampler_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = MvnModel::new(2).unwrap();
    let mu = DVector::from_vec(vec![1.0, -2.0]);
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let s = model.sample(&model.pack(&mu, &sigma), 100_000, &mut rng).unwrap();
    let (m_hat, s_hat) = model.unpack(&model.mle(&s).unwrap()).unwrap();
    assert!((m_hat - mu).amax() < 0.03);
    assert!((s_hat - sigma).amax() < 0.05);
}

#[test]
fn glm_samplers_follow_their_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let beta = Param::from_vec(vec![0.7, -0.4]);
    for link in [GlmLink::Logistic, GlmLink::ExpReg] {
        let m = GlmModel::new(link, 2).unwrap();
        let s = m.sample(&beta, 50_000, &mut rng).unwrap();
        let resid: f64 = s.iter().map(|o| o.y - m.mean_response(&beta, &o.x)).sum::<f64>() / s.len() as f64;
        assert!(resid.abs() < 0.02, "{link:?}: {resid}");
    }
}

#[test]
fn fitted_point_maximises_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = MvnModel::new(2).unwrap();
    let truth = model.pack(&DVector::zeros(2), &DMatrix::identity(2, 2));
    let s = model.sample(&truth, 40, &mut rng).unwrap();
    let qq = q(0.9);
    let fit = solve_mlqe(&s, &model, qq, &SolverOptions::default()).unwrap();
    assert!(fit.converged);
    assert_relative_eq!(fit.objective, lq_likelihood(&s, &model, &fit.theta, qq).unwrap(), epsilon = 1e-12);
    for _ in 0..20 {
        let bump = Param::from_fn(fit.theta.len(), |_, _| rng.random_range(-0.01..0.01));
        if let Ok(v) = lq_likelihood(&s, &model, &(&fit.theta + bump), qq) {
            assert!(v <= fit.objective + 1e-12);
        }
    }
}
