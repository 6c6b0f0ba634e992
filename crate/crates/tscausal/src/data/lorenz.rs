//! Lorenz-96 dynamics and its Runge–Kutta integrator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Edge};
use crate::tensor::Tensor;

use super::{DatasetBundle, GeneratorSpec};

/// State magnitude beyond which the integration counts as blown up.
const BLOW_UP: f64 = 1e9;

/// Lorenz-96 time derivative:
/// `dx_i/dt = (x_{i+1} − x_{i−2})·x_{i−1} − x_i + F`, indices cyclic.
pub fn lorenz_deriv(state: &[f64], forcing: f64) -> Result<Vec<f64>> {
    let n = state.len();
    if n < 4 {
        return Err(Error::arg(format!(
            "Lorenz-96 needs at least 4 variables for distinct cyclic neighbors, got {n}"
        )));
    }
    let mut d = vec![0.0; n];
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        d[i] = (state[ip1] - state[im2]) * state[im1] - state[i] + forcing;
    }
    Ok(d)
}

/// One classical 4th-order Runge–Kutta step of `dx/dt = deriv(x)`.
pub fn rk4_step(state: &[f64], dt: f64, deriv: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let n = state.len();
    let k1 = deriv(state);
    let mid1: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k1[i]).collect();
    let k2 = deriv(&mid1);
    let mid2: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k2[i]).collect();
    let k3 = deriv(&mid2);
    let end: Vec<f64> = (0..n).map(|i| state[i] + dt * k3[i]).collect();
    let k4 = deriv(&end);
    (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// The cyclic ground truth: `i−2, i−1, i+1 → i` plus the self-loop from
/// the damping term. Delays are unknown (continuous-time dynamics).
fn lorenz_truth(n: usize) -> Result<CausalGraph> {
    let mut g = CausalGraph::new(n);
    for i in 0..n {
        for source in [(i + n - 2) % n, (i + n - 1) % n, (i + 1) % n, i] {
            g.add_edge(Edge {
                source,
                target: i,
                delay: None,
                score: None,
            })?;
        }
    }
    Ok(g)
}

/// Integrate a seeded Lorenz-96 trajectory into a dataset bundle.
///
/// The state starts at `forcing` plus a small seeded perturbation
/// (stddev 0.01 per variable), runs `burn_in` steps unrecorded, then
/// records `length` points `stride` steps apart. Any non-finite or
/// astronomically large state aborts with an error naming the step.
pub fn gen_lorenz96(spec: &GeneratorSpec) -> Result<DatasetBundle> {
    let GeneratorSpec::Lorenz96 {
        n_series,
        length,
        forcing,
        dt,
        burn_in,
        stride,
        seed,
    } = spec
    else {
        return Err(Error::arg(
            "gen_lorenz96 needs a lorenz96 generator spec".to_string(),
        ));
    };
    spec.validate()?;
    let (n, len) = (*n_series, *length);

    let mut rng = ChaCha12Rng::seed_from_u64(*seed);
    let mut state: Vec<f64> = (0..n)
        .map(|_| forcing + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut step = 0usize;
    let advance = |state: &mut Vec<f64>, step: &mut usize| -> Result<()> {
        *state = rk4_step(state, *dt, |s| {
            lorenz_deriv(s, *forcing).expect("length checked above")
        });
        *step += 1;
        if state.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::IntegrationBlowUp { step: *step });
        }
        Ok(())
    };

    for _ in 0..*burn_in {
        advance(&mut state, &mut step)?;
    }
    let mut series = Tensor::zeros(&[n, len]);
    for (i, &v) in state.iter().enumerate() {
        series.set2(i, 0, v);
    }
    for t0 in 1..len {
        for _ in 0..*stride {
            advance(&mut state, &mut step)?;
        }
        for (i, &v) in state.iter().enumerate() {
            series.set2(i, t0, v);
        }
    }

    Ok(DatasetBundle {
        series,
        labels: DatasetBundle::default_labels(n),
        truth: Some(lorenz_truth(n)?),
        provenance: Some(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, length: usize, forcing: f64, seed: u64) -> GeneratorSpec {
        GeneratorSpec::Lorenz96 {
            n_series: n,
            length,
            forcing,
            dt: 0.01,
            burn_in: 100,
            stride: 10,
            seed,
        }
    }

    #[test]
    fn derivative_hand_values() {
        // Zero state: every component is the forcing.
        let d = lorenz_deriv(&[0.0; 6], 8.0).unwrap();
        assert!(d.iter().all(|&v| v == 8.0));

        // Uniform state at the forcing: equilibrium.
        let d = lorenz_deriv(&[8.0; 5], 8.0).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));

        // First component of [1,2,3,4,5] at zero forcing:
        // (x2 − x4)·x5 − x1 = (2 − 4)·5 − 1 = −11.
        let d = lorenz_deriv(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap();
        assert_eq!(d[0], -11.0);

        assert!(lorenz_deriv(&[1.0, 2.0, 3.0], 8.0).is_err());
    }

    #[test]
    fn rk4_tracks_exponential_decay() {
        // dx/dt = −x from 1: x(1) = e^{−1}, ten steps of 0.1.
        let mut state = vec![1.0];
        for _ in 0..10 {
            state = rk4_step(&state, 0.1, |s| vec![-s[0]]);
        }
        assert!(
            (state[0] - (-1.0f64).exp()).abs() < 1e-6,
            "got {}",
            state[0]
        );
    }

    #[test]
    fn zero_forcing_from_zero_state_stays_zero() {
        let spec = GeneratorSpec::Lorenz96 {
            n_series: 4,
            length: 5,
            forcing: 0.0,
            dt: 0.01,
            burn_in: 10,
            stride: 2,
            seed: 0,
        };
        // The initial state is a small perturbation of F = 0 rather than
        // exactly zero, and the system is damped at F = 0: values decay.
        let bundle = gen_lorenz96(&spec).unwrap();
        let first_mag: f64 = (0..4).map(|i| bundle.series.get2(i, 0).abs()).sum();
        let last_mag: f64 = (0..4).map(|i| bundle.series.get2(i, 4).abs()).sum();
        assert!(first_mag < 0.1);
        assert!(last_mag < first_mag);

        // The exact fixed point: integrating the zero state directly.
        let next = rk4_step(&[0.0; 4], 0.01, |s| lorenz_deriv(s, 0.0).unwrap());
        assert!(next.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let a = gen_lorenz96(&spec(5, 50, 8.0, 21)).unwrap();
        let b = gen_lorenz96(&spec(5, 50, 8.0, 21)).unwrap();
        assert_eq!(a.series.data(), b.series.data());
        let c = gen_lorenz96(&spec(5, 50, 8.0, 22)).unwrap();
        assert_ne!(a.series.data(), c.series.data());
    }

    #[test]
    fn state_stays_finite_at_high_forcing() {
        // 10^5 steps at F = 40, dt = 0.01 must stay finite.
        let mut state: Vec<f64> = (0..10).map(|i| 40.0 + 0.001 * i as f64).collect();
        for _ in 0..100_000 {
            state = rk4_step(&state, 0.01, |s| lorenz_deriv(s, 40.0).unwrap());
        }
        assert!(state.iter().all(|v| v.is_finite()));
        assert!(state.iter().all(|v| v.abs() < 100.0), "{state:?}");
    }

    #[test]
    fn blow_up_names_the_step() {
        // A huge dt makes RK4 unstable within a few steps.
        let spec = GeneratorSpec::Lorenz96 {
            n_series: 5,
            length: 100,
            forcing: 30.0,
            dt: 10.0,
            burn_in: 0,
            stride: 1,
            seed: 1,
        };
        match gen_lorenz96(&spec) {
            Err(Error::IntegrationBlowUp { step }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn truth_is_cyclic_with_self_loops() {
        let bundle = gen_lorenz96(&spec(6, 10, 8.0, 2)).unwrap();
        let truth = bundle.truth.unwrap();
        assert_eq!(truth.vertex_count(), 6);
        assert_eq!(truth.edge_count(), 4 * 6);
        for i in 0..6usize {
            assert!(truth.has_edge(i, i), "self-loop {i}");
            assert!(truth.has_edge((i + 1) % 6, i));
            assert!(truth.has_edge((i + 5) % 6, i));
            assert!(truth.has_edge((i + 4) % 6, i));
            assert!(!truth.has_edge((i + 3) % 6, i), "opposite vertex {i}");
            assert_eq!(truth.delay((i + 1) % 6, i), None);
        }
    }

    #[test]
    fn bundle_has_requested_shape() {
        let bundle = gen_lorenz96(&spec(7, 33, 8.0, 3)).unwrap();
        assert_eq!(bundle.series.shape(), &[7, 33]);
        assert_eq!(bundle.labels.len(), 7);
        assert!(bundle.series.is_finite());
    }
}
