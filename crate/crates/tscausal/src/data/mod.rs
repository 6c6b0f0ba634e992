//! Ground-truthed dataset generation and file ingestion.
//!
//! Two seeded generators ship with the crate: linear lagged systems over
//! four named small structures, and the cyclic Lorenz-96 system. Both
//! produce a [`DatasetBundle`] carrying the series, labels, the
//! ground-truth graph, and a provenance record sufficient to regenerate
//! the data bit-for-bit. External data enters through CSV files.

mod io;
mod lorenz;
mod synthetic;

pub use io::{load_csv, load_ground_truth, write_series_csv, write_truth_csv};
pub use lorenz::{gen_lorenz96, lorenz_deriv, rk4_step};
pub use synthetic::{default_edges, gen_basic, gen_linear};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::tensor::Tensor;

/// The four named small causal structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// 4 series: 1→2, 1→3, 2→4, 3→4 (1-based).
    Diamond,
    /// 3 series: 1→2, 2→3, 1→3.
    Mediator,
    /// 3 series: 1→3, 2→3.
    VStructure,
    /// 3 series: 1→2, 1→3.
    Fork,
}

impl Structure {
    /// Number of series in the structure.
    pub fn n_series(self) -> usize {
        match self {
            Structure::Diamond => 4,
            Structure::Mediator | Structure::VStructure | Structure::Fork => 3,
        }
    }

    /// All structures, for enumeration in messages and benchmarks.
    pub const ALL: [Structure; 4] = [
        Structure::Diamond,
        Structure::Mediator,
        Structure::VStructure,
        Structure::Fork,
    ];
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Structure::Diamond => "diamond",
            Structure::Mediator => "mediator",
            Structure::VStructure => "v-structure",
            Structure::Fork => "fork",
        };
        f.write_str(name)
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Structure> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diamond" => Ok(Structure::Diamond),
            "mediator" => Ok(Structure::Mediator),
            "v-structure" | "vstructure" | "v_structure" => Ok(Structure::VStructure),
            "fork" => Ok(Structure::Fork),
            other => Err(Error::arg(format!(
                "unknown structure `{other}`; valid structures: diamond, mediator, v-structure, fork"
            ))),
        }
    }
}

/// One weighted, lagged edge of a linear system. Indices are 1-based to
/// match the on-disk truth format (the in-memory graph is 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    /// 1-based source series.
    pub source: usize,
    /// 1-based target series.
    pub target: usize,
    /// Linear coefficient.
    #[serde(default = "default_coefficient")]
    pub coefficient: f64,
    /// Time lag in slots (0 = instantaneous).
    pub lag: usize,
}

fn default_coefficient() -> f64 {
    0.8
}

fn default_length() -> usize {
    1000
}

fn default_noise() -> f64 {
    1.0
}

fn default_lorenz_series() -> usize {
    10
}

fn default_forcing() -> f64 {
    30.0
}

fn default_dt() -> f64 {
    0.01
}

fn default_burn_in() -> usize {
    1000
}

fn default_stride() -> usize {
    10
}

/// A complete, seed-deterministic description of a generated dataset.
/// Serialized verbatim as the bundle's provenance side-car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// Linear lagged system over a named structure.
    Basic {
        structure: Structure,
        /// Series length L.
        #[serde(default = "default_length")]
        length: usize,
        /// Innovation scale for series *with* parents; parentless series
        /// always keep unit innovations so the system stays excited.
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
        /// Optional replacement for the structure's default edge table.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edges: Option<Vec<EdgeSpec>>,
    },
    /// Cyclic Lorenz-96 system integrated with 4th-order Runge–Kutta.
    Lorenz96 {
        #[serde(default = "default_lorenz_series")]
        n_series: usize,
        /// Output points L after burn-in and subsampling.
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "default_forcing")]
        forcing: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        /// Integration steps discarded before sampling starts.
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        /// Integration steps between consecutive output points.
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl GeneratorSpec {
    /// Run the generator this spec describes.
    pub fn generate(&self) -> Result<DatasetBundle> {
        match self {
            GeneratorSpec::Basic { .. } => gen_basic(self),
            GeneratorSpec::Lorenz96 { .. } => gen_lorenz96(self),
        }
    }

    /// Copy of the spec with its seed replaced (multi-seed benchmarks).
    pub fn seeded(&self, new_seed: u64) -> GeneratorSpec {
        let mut spec = self.clone();
        match &mut spec {
            GeneratorSpec::Basic { seed, .. } => *seed = new_seed,
            GeneratorSpec::Lorenz96 { seed, .. } => *seed = new_seed,
        }
        spec
    }

    /// The seed the spec currently carries.
    pub fn seed(&self) -> u64 {
        match self {
            GeneratorSpec::Basic { seed, .. } => *seed,
            GeneratorSpec::Lorenz96 { seed, .. } => *seed,
        }
    }

    /// Number of series the generated bundle will have.
    pub fn n_series(&self) -> usize {
        match self {
            GeneratorSpec::Basic { structure, .. } => structure.n_series(),
            GeneratorSpec::Lorenz96 { n_series, .. } => *n_series,
        }
    }

    /// All violated invariants, empty when the spec is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            GeneratorSpec::Basic {
                structure,
                length,
                noise,
                edges,
                ..
            } => {
                if *length < 2 {
                    v.push(format!("length must be at least 2, got {length}"));
                }
                if !(*noise >= 0.0) || !noise.is_finite() {
                    v.push(format!("noise must be finite and non-negative, got {noise}"));
                }
                if let Some(edges) = edges {
                    let n = structure.n_series();
                    for e in edges {
                        if e.source == 0 || e.source > n || e.target == 0 || e.target > n {
                            v.push(format!(
                                "edge {}->{} out of 1..={n}",
                                e.source, e.target
                            ));
                        }
                        if !e.coefficient.is_finite() {
                            v.push(format!(
                                "edge {}->{} has non-finite coefficient",
                                e.source, e.target
                            ));
                        }
                    }
                }
            }
            GeneratorSpec::Lorenz96 {
                n_series,
                length,
                forcing,
                dt,
                stride,
                ..
            } => {
                if *n_series < 4 {
                    v.push(format!(
                        "Lorenz-96 needs at least 4 series (cyclic neighbors), got {n_series}"
                    ));
                }
                if *length < 2 {
                    v.push(format!("length must be at least 2, got {length}"));
                }
                if !forcing.is_finite() {
                    v.push(format!("forcing must be finite, got {forcing}"));
                }
                if !(*dt > 0.0) || !dt.is_finite() {
                    v.push(format!("dt must be positive and finite, got {dt}"));
                }
                if *stride == 0 {
                    v.push("stride must be at least 1".to_string());
                }
            }
        }
        v
    }

    /// Error listing every violation, if any.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// A dataset together with everything needed to score and reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    /// The series, `[N, L]`.
    pub series: Tensor,
    /// One label per series.
    pub labels: Vec<String>,
    /// Ground-truth graph, when known.
    pub truth: Option<CausalGraph>,
    /// The generating spec, when the bundle was generated here.
    pub provenance: Option<GeneratorSpec>,
}

/// Files a bundle was written to.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    pub data: PathBuf,
    pub truth: Option<PathBuf>,
    pub provenance: Option<PathBuf>,
}

impl DatasetBundle {
    /// Number of series.
    pub fn n_series(&self) -> usize {
        self.series.shape()[0]
    }

    /// Series length.
    pub fn length(&self) -> usize {
        self.series.shape()[1]
    }

    /// Write `data.csv` (+ `truth.csv`, `provenance.json` when present)
    /// into `dir`, creating it if needed. Contents are byte-stable for
    /// identical bundles: no timestamps, no environment echoes.
    pub fn write(&self, dir: &Path) -> Result<BundlePaths> {
        std::fs::create_dir_all(dir)?;
        let data = dir.join("data.csv");
        write_series_csv(&data, &self.series, &self.labels)?;
        let truth = match &self.truth {
            Some(graph) => {
                let path = dir.join("truth.csv");
                write_truth_csv(&path, graph)?;
                Some(path)
            }
            None => None,
        };
        let provenance = match &self.provenance {
            Some(spec) => {
                let path = dir.join("provenance.json");
                let mut text = serde_json::to_string_pretty(spec)?;
                text.push('\n');
                std::fs::write(&path, text)?;
                Some(path)
            }
            None => None,
        };
        Ok(BundlePaths {
            data,
            truth,
            provenance,
        })
    }

    /// Default labels `series_1..series_N`.
    pub fn default_labels(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("series_{i}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_parsing_and_names_roundtrip() {
        for s in Structure::ALL {
            let parsed: Structure = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert_eq!("vstructure".parse::<Structure>().unwrap(), Structure::VStructure);
        assert_eq!(" FORK ".parse::<Structure>().unwrap(), Structure::Fork);
        let err = "triangle".parse::<Structure>().unwrap_err().to_string();
        assert!(err.contains("diamond"), "{err}");
        assert!(err.contains("fork"), "{err}");
    }

    #[test]
    fn structure_sizes_match_shapes() {
        assert_eq!(Structure::Diamond.n_series(), 4);
        assert_eq!(Structure::Mediator.n_series(), 3);
        assert_eq!(Structure::VStructure.n_series(), 3);
        assert_eq!(Structure::Fork.n_series(), 3);
    }

    #[test]
    fn generator_spec_json_roundtrip_with_defaults() {
        let json = r#"{"kind":"basic","structure":"fork","seed":7}"#;
        let spec: GeneratorSpec = serde_json::from_str(json).unwrap();
        match &spec {
            GeneratorSpec::Basic {
                structure,
                length,
                noise,
                seed,
                edges,
            } => {
                assert_eq!(*structure, Structure::Fork);
                assert_eq!(*length, 1000);
                assert_eq!(*noise, 1.0);
                assert_eq!(*seed, 7);
                assert!(edges.is_none());
            }
            other => panic!("wrong variant {other:?}"),
        }
        let back: GeneratorSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);

        let json = r#"{"kind":"lorenz96","seed":3}"#;
        let spec: GeneratorSpec = serde_json::from_str(json).unwrap();
        match spec {
            GeneratorSpec::Lorenz96 {
                n_series,
                length,
                forcing,
                dt,
                burn_in,
                stride,
                seed,
            } => {
                assert_eq!(n_series, 10);
                assert_eq!(length, 1000);
                assert_eq!(forcing, 30.0);
                assert_eq!(dt, 0.01);
                assert_eq!(burn_in, 1000);
                assert_eq!(stride, 10);
                assert_eq!(seed, 3);
            }
            other => panic!("wrong variant {other:?}"),
        }
    }

    #[test]
    fn spec_violations_are_collected() {
        let spec = GeneratorSpec::Lorenz96 {
            n_series: 3,
            length: 1,
            forcing: f64::NAN,
            dt: 0.0,
            burn_in: 0,
            stride: 0,
            seed: 0,
        };
        assert_eq!(spec.violations().len(), 5);
        let spec = GeneratorSpec::Basic {
            structure: Structure::Fork,
            length: 1000,
            noise: 1.0,
            seed: 0,
            edges: Some(vec![EdgeSpec {
                source: 0,
                target: 9,
                coefficient: f64::INFINITY,
                lag: 1,
            }]),
        };
        // index 0 invalid (1-based), index 9 out of range, coefficient bad
        // — the range problems join into one message per edge.
        assert_eq!(spec.violations().len(), 2);
    }

    #[test]
    fn seeded_replaces_only_the_seed() {
        let spec = GeneratorSpec::Basic {
            structure: Structure::Diamond,
            length: 500,
            noise: 0.5,
            seed: 1,
            edges: None,
        };
        let reseeded = spec.seeded(99);
        assert_eq!(reseeded.seed(), 99);
        match reseeded {
            GeneratorSpec::Basic { length, noise, .. } => {
                assert_eq!(length, 500);
                assert_eq!(noise, 0.5);
            }
            other => panic!("wrong variant {other:?}"),
        }
    }
}
