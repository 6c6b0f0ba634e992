//! Linear lagged systems over the four named structures.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Edge};
use crate::tensor::Tensor;

use super::{DatasetBundle, EdgeSpec, GeneratorSpec, Structure};

/// The default edge table of a structure: coefficient 0.8, lags 1–2.
pub fn default_edges(structure: Structure) -> Vec<EdgeSpec> {
    let table: &[(usize, usize, usize)] = match structure {
        // (source, target, lag), 1-based.
        Structure::Diamond => &[(1, 2, 1), (1, 3, 2), (2, 4, 1), (3, 4, 1)],
        Structure::Mediator => &[(1, 2, 1), (2, 3, 1), (1, 3, 2)],
        Structure::VStructure => &[(1, 3, 1), (2, 3, 2)],
        Structure::Fork => &[(1, 2, 1), (1, 3, 2)],
    };
    table
        .iter()
        .map(|&(source, target, lag)| EdgeSpec {
            source,
            target,
            coefficient: 0.8,
            lag,
        })
        .collect()
}

/// Topological order of the vertices under instantaneous (lag-0) edges
/// only — lagged edges never constrain the within-slot fill order. Uses
/// a smallest-index-first frontier so the order is deterministic.
fn instantaneous_order(n: usize, edges: &[EdgeSpec]) -> Result<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        if e.lag == 0 {
            if e.source == e.target {
                return Err(Error::Graph(format!(
                    "series {} depends instantaneously on itself",
                    e.source
                )));
            }
            out[e.source - 1].push(e.target - 1);
            indegree[e.target - 1] += 1;
        }
    }
    let mut frontier: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = frontier.pop() {
        order.push(i);
        for &j in &out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                frontier.push(Reverse(j));
            }
        }
    }
    if order.len() != n {
        return Err(Error::Graph(
            "instantaneous dependencies form a cycle".to_string(),
        ));
    }
    Ok(order)
}

/// Simulate a seeded linear lagged system.
///
/// Innovations for all series and slots are drawn first (slot-major:
/// every series' innovation for slot 1, then slot 2, …) so the stream a
/// series sees never depends on the edge table. Series with at least one
/// parent scale their innovation by `noise`; parentless series keep the
/// unit scale so the system stays excited even at `noise = 0`. Values
/// before slot 1 are zero.
pub fn gen_linear(
    n: usize,
    edges: &[EdgeSpec],
    length: usize,
    noise: f64,
    seed: u64,
) -> Result<(Tensor, CausalGraph)> {
    if n == 0 {
        return Err(Error::arg("need at least one series".to_string()));
    }
    if length < 2 {
        return Err(Error::arg(format!("length must be at least 2, got {length}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::arg(format!(
            "noise must be finite and non-negative, got {noise}"
        )));
    }
    for e in edges {
        if e.source == 0 || e.source > n || e.target == 0 || e.target > n {
            return Err(Error::Graph(format!(
                "edge {}->{} out of 1..={n}",
                e.source, e.target
            )));
        }
        if !e.coefficient.is_finite() {
            return Err(Error::arg(format!(
                "edge {}->{} has non-finite coefficient",
                e.source, e.target
            )));
        }
    }
    let mut truth = CausalGraph::new(n);
    for e in edges {
        truth.add_edge(Edge {
            source: e.source - 1,
            target: e.target - 1,
            delay: Some(e.lag as u32),
            score: None,
        })?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut innovations = Tensor::zeros(&[n, length]);
    for t0 in 0..length {
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            innovations.set2(i, t0, e);
        }
    }

    let mut has_parent = vec![false; n];
    for e in edges {
        has_parent[e.target - 1] = true;
    }
    let order = instantaneous_order(n, edges)?;

    let mut series = Tensor::zeros(&[n, length]);
    for t0 in 0..length {
        for &i in &order {
            let scale = if has_parent[i] { noise } else { 1.0 };
            let mut v = scale * innovations.get2(i, t0);
            for e in edges {
                if e.target - 1 == i && t0 >= e.lag {
                    v += e.coefficient * series.get2(e.source - 1, t0 - e.lag);
                }
            }
            series.set2(i, t0, v);
        }
    }
    if !series.is_finite() {
        return Err(Error::arg(
            "generated series diverged; rescale the edge coefficients".to_string(),
        ));
    }
    Ok((series, truth))
}

/// Generate a linear lagged bundle from a `Basic` spec.
pub fn gen_basic(spec: &GeneratorSpec) -> Result<DatasetBundle> {
    let GeneratorSpec::Basic {
        structure,
        length,
        noise,
        seed,
        edges,
    } = spec
    else {
        return Err(Error::arg(
            "gen_basic needs a basic generator spec".to_string(),
        ));
    };
    spec.validate()?;
    let n = structure.n_series();
    let table = edges.clone().unwrap_or_else(|| default_edges(*structure));
    let (series, truth) = gen_linear(n, &table, *length, *noise, *seed)?;
    Ok(DatasetBundle {
        series,
        labels: DatasetBundle::default_labels(n),
        truth: Some(truth),
        provenance: Some(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn basic(structure: Structure, noise: f64, seed: u64) -> GeneratorSpec {
        GeneratorSpec::Basic {
            structure,
            length: 1000,
            noise,
            seed,
            edges: None,
        }
    }

    #[test]
    fn zero_noise_fork_is_an_exact_recursion() {
        let spec = GeneratorSpec::Basic {
            structure: Structure::Fork,
            length: 200,
            noise: 0.0,
            seed: 11,
            edges: Some(vec![
                EdgeSpec {
                    source: 1,
                    target: 2,
                    coefficient: 1.0,
                    lag: 1,
                },
                EdgeSpec {
                    source: 1,
                    target: 3,
                    coefficient: 1.0,
                    lag: 2,
                },
            ]),
        };
        let bundle = gen_basic(&spec).unwrap();
        let s = &bundle.series;
        for t0 in 1..200 {
            assert_eq!(s.get2(1, t0), s.get2(0, t0 - 1), "x2(t) = x1(t-1)");
        }
        for t0 in 2..200 {
            assert_eq!(s.get2(2, t0), s.get2(0, t0 - 2), "x3(t) = x1(t-2)");
        }
        // Pre-history is zero.
        assert_eq!(s.get2(1, 0), 0.0);
        assert_eq!(s.get2(2, 0), 0.0);
        assert_eq!(s.get2(2, 1), 0.0);
        // The root still varies: its innovations keep unit scale.
        assert!(s.row(0).iter().any(|&v| v.abs() > 0.1));
    }

    #[test]
    fn same_seed_reproduces_the_bundle_exactly() {
        let a = gen_basic(&basic(Structure::Diamond, 1.0, 42)).unwrap();
        let b = gen_basic(&basic(Structure::Diamond, 1.0, 42)).unwrap();
        assert_eq!(a.series.data(), b.series.data());
        assert_eq!(a.truth, b.truth);
        let c = gen_basic(&basic(Structure::Diamond, 1.0, 43)).unwrap();
        assert_ne!(a.series.data(), c.series.data());
    }

    #[test]
    fn innovation_moments_match_standard_normal() {
        // The first series of a fork is a root: pure unit innovations.
        let spec = GeneratorSpec::Basic {
            structure: Structure::Fork,
            length: 100_000,
            noise: 1.0,
            seed: 5,
            edges: None,
        };
        let bundle = gen_basic(&spec).unwrap();
        let root = bundle.series.row(0);
        let mean = root.iter().sum::<f64>() / root.len() as f64;
        let var = root.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (root.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn innovations_are_drawn_slot_major() {
        // The root of a fork reads exactly every third draw of the
        // seeded stream: slot-major means [s1(t1), s2(t1), s3(t1),
        // s1(t2), …], and series 1 is parentless so its values *are*
        // its innovations.
        let spec = basic(Structure::Fork, 1.0, 77);
        let bundle = gen_basic(&spec).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let draws: Vec<f64> = (0..3 * 1000).map(|_| rng.sample(StandardNormal)).collect();
        for t0 in 0..1000 {
            assert_eq!(bundle.series.get2(0, t0), draws[3 * t0]);
        }
    }

    #[test]
    fn truth_graphs_carry_the_lag_tables() {
        let bundle = gen_basic(&basic(Structure::Diamond, 1.0, 1)).unwrap();
        let truth = bundle.truth.unwrap();
        assert_eq!(truth.vertex_count(), 4);
        assert_eq!(truth.edge_count(), 4);
        assert_eq!(truth.delay(0, 1), Some(1));
        assert_eq!(truth.delay(0, 2), Some(2));
        assert_eq!(truth.delay(1, 3), Some(1));
        assert_eq!(truth.delay(2, 3), Some(1));
        for e in truth.edges() {
            assert_ne!(e.source, e.target, "no self-loops in synthetic truth");
        }

        let bundle = gen_basic(&basic(Structure::VStructure, 1.0, 1)).unwrap();
        let truth = bundle.truth.unwrap();
        assert_eq!(truth.delay(0, 2), Some(1));
        assert_eq!(truth.delay(1, 2), Some(2));
        assert!(!truth.has_edge(0, 1));
    }

    #[test]
    fn zeroed_coefficient_decouples_the_target() {
        // With the 1→3 coefficient zeroed in a fork and zero noise, series
        // 3 is identically zero — independent of series 1's innovations.
        let spec = GeneratorSpec::Basic {
            structure: Structure::Fork,
            length: 100,
            noise: 0.0,
            seed: 9,
            edges: Some(vec![
                EdgeSpec {
                    source: 1,
                    target: 2,
                    coefficient: 0.8,
                    lag: 1,
                },
                EdgeSpec {
                    source: 1,
                    target: 3,
                    coefficient: 0.0,
                    lag: 2,
                },
            ]),
        };
        let bundle = gen_basic(&spec).unwrap();
        assert!(bundle.series.row(2).iter().all(|&v| v == 0.0));
        assert!(bundle.series.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn instantaneous_edges_fill_in_dependency_order() {
        // 1 → 2 at lag 0: x2(t) = x1(t) exactly at zero noise, c = 1.
        let edges = vec![EdgeSpec {
            source: 1,
            target: 2,
            coefficient: 1.0,
            lag: 0,
        }];
        let (series, truth) = gen_linear(2, &edges, 50, 0.0, 3).unwrap();
        for t0 in 0..50 {
            assert_eq!(series.get2(1, t0), series.get2(0, t0));
        }
        assert_eq!(truth.delay(0, 1), Some(0));
    }

    #[test]
    fn instantaneous_cycles_are_rejected() {
        let edges = vec![
            EdgeSpec {
                source: 1,
                target: 2,
                coefficient: 0.5,
                lag: 0,
            },
            EdgeSpec {
                source: 2,
                target: 1,
                coefficient: 0.5,
                lag: 0,
            },
        ];
        match gen_linear(2, &edges, 50, 1.0, 3) {
            Err(Error::Graph(msg)) => assert!(msg.contains("cycle"), "{msg}"),
            other => panic!("expected cycle rejection, got {other:?}"),
        }
        // A lagged cycle is fine (feedback over time).
        let edges = vec![
            EdgeSpec {
                source: 1,
                target: 2,
                coefficient: 0.5,
                lag: 1,
            },
            EdgeSpec {
                source: 2,
                target: 1,
                coefficient: 0.5,
                lag: 1,
            },
        ];
        assert!(gen_linear(2, &edges, 50, 1.0, 3).is_ok());
    }

    #[test]
    fn diverging_coefficients_are_reported() {
        let edges = vec![EdgeSpec {
            source: 1,
            target: 1,
            coefficient: 3.0,
            lag: 1,
        }];
        assert!(gen_linear(1, &edges, 1000, 1.0, 3).is_err());
    }

    #[test]
    fn default_tables_stay_within_announced_lags() {
        for s in Structure::ALL {
            for e in default_edges(s) {
                assert!((1..=2).contains(&e.lag), "{s}: lag {}", e.lag);
                assert_eq!(e.coefficient, 0.8);
                assert!(e.source >= 1 && e.target <= s.n_series());
            }
        }
    }
}
