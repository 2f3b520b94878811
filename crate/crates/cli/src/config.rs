//! Experiment configuration: a TOML document describing the space, an
//! optional chain, the kernel, the set family, a partition chain,
//! integrands, Monte Carlo parameters and tolerance overrides.
//!
//! ```toml
//! [space]
//! atoms = ["a", "b", "c"]
//! weights = [1.0, 1.0, 1.0]
//!
//! [kernel]
//! type = "wiener"
//!
//! [sets]
//! family = [["a"], ["b", "c"]]
//! partition_chain = [[["a", "b", "c"]], [["a"], ["b", "c"]], [["a"], ["b"], ["c"]]]
//!
//! [[integrand]]
//! name = "phi"
//! terms = [{ coefficient = 1.0, set = ["a"] }, { coefficient = 2.0, set = ["b"] }]
//!
//! [mc]
//! n_samples = 200000
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use setkernel::markov::green_kernel;
use setkernel::{
    MarkovChain, MeasurableSet, MeasureSpace, MonteCarlo, Partition, PartitionChain, SetKernel,
    SimpleFunction,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub space: SpaceSpec,
    pub chain: Option<ChainSpec>,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub sets: SetsSpec,
    #[serde(default, rename = "integrand")]
    pub integrands: Vec<IntegrandSpec>,
    #[serde(default)]
    pub cross: Vec<CrossSpec>,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub atoms: Vec<String>,
    /// Omitted when the chain is given by conductances.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Transition matrix, rows indexed like `space.atoms`.
    pub matrix: Option<Vec<Vec<f64>>>,
    pub edges: Option<Vec<EdgeSpec>>,
    /// Killing mass per atom id; conductance chains only.
    #[serde(default)]
    pub kill: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub conductance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelType {
    Wiener,
    RankOne,
    Counting,
    Operator,
    Markov,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    pub kind: KernelType,
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetsSpec {
    #[serde(default)]
    pub family: Vec<Vec<String>>,
    #[serde(default)]
    pub partition_chain: Vec<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    pub name: String,
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coefficient: f64,
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSpec {
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_samples: 200_000,
            seed: 0,
        }
    }
}

/// Check tolerances; every field can be overridden in `[tolerances]` or with
/// `--tol NAME=VALUE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub positive_definite: f64,
    pub schwarz: f64,
    pub absolute_continuity: f64,
    pub reversibility: f64,
    pub realize: f64,
    pub density: f64,
    pub isometry: f64,
    pub adjoint: f64,
    pub onb: f64,
    pub green_identity: f64,
    pub green_series: f64,
    pub green_factor: f64,
    pub laplacian_gap: f64,
    pub sigmas: f64,
    pub monotone: f64,
    pub supremum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            positive_definite: 1e-10,
            schwarz: 1e-10,
            absolute_continuity: 1e-12,
            reversibility: 1e-12,
            realize: 1e-8,
            density: 1e-9,
            isometry: 1e-9,
            adjoint: 1e-9,
            onb: 1e-9,
            green_identity: 1e-9,
            green_series: 1e-8,
            green_factor: 1e-8,
            laplacian_gap: 1e-10,
            sigmas: 5.0,
            monotone: 1e-10,
            supremum: 1e-9,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 16] = [
        "positive_definite",
        "schwarz",
        "absolute_continuity",
        "reversibility",
        "realize",
        "density",
        "isometry",
        "adjoint",
        "onb",
        "green_identity",
        "green_series",
        "green_factor",
        "laplacian_gap",
        "sigmas",
        "monotone",
        "supremum",
    ];

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(CliError::Config(format!(
                "tolerance {name} must be a nonnegative number, got {value}"
            )));
        }
        let slot = match name {
            "positive_definite" => &mut self.positive_definite,
            "schwarz" => &mut self.schwarz,
            "absolute_continuity" => &mut self.absolute_continuity,
            "reversibility" => &mut self.reversibility,
            "realize" => &mut self.realize,
            "density" => &mut self.density,
            "isometry" => &mut self.isometry,
            "adjoint" => &mut self.adjoint,
            "onb" => &mut self.onb,
            "green_identity" => &mut self.green_identity,
            "green_series" => &mut self.green_series,
            "green_factor" => &mut self.green_factor,
            "laplacian_gap" => &mut self.laplacian_gap,
            "sigmas" => &mut self.sigmas,
            "monotone" => &mut self.monotone,
            "supremum" => &mut self.supremum,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown tolerance {name:?}; known: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Applies a `NAME=VALUE` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected NAME=VALUE, got {spec:?}")))?;
        let value: f64 = value.trim().parse().map_err(|_| {
            CliError::Config(format!("tolerance {name}: {value:?} is not a number"))
        })?;
        self.set(name.trim(), value)
    }
}

/// A named simple function.
#[derive(Debug, Clone)]
pub struct Integrand {
    pub name: String,
    pub function: SimpleFunction,
}

/// Resolved experiment: ids mapped to atom indices and everything
/// validated except the properties the checks themselves measure.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub space: MeasureSpace,
    pub chain: Option<MarkovChain>,
    pub kernel_type: KernelType,
    pub operator: Option<DMatrix<f64>>,
    pub family: Vec<MeasurableSet>,
    pub partition_chain: Option<PartitionChain>,
    pub integrands: Vec<Integrand>,
    pub cross: Vec<(usize, usize)>,
    pub mc: MonteCarlo,
    pub tolerances: Tolerances,
}

/// 1-based line of the first occurrence of `"needle"` in the source.
fn line_of(source: &str, needle: &str) -> Option<usize> {
    let quoted = format!("\"{needle}\"");
    source
        .lines()
        .position(|l| l.contains(&quoted))
        .map(|i| i + 1)
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&source).map_err(|e| match e {
            CliError::Config(message) => CliError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(source: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(source)
            .map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
        Self::resolve(raw, source)
    }

    fn resolve(raw: RawConfig, source: &str) -> Result<Self> {
        let atoms = raw.space.atoms.clone();
        let n = atoms.len();
        let index = |id: &str| -> Result<usize> {
            atoms.iter().position(|a| a == id).ok_or_else(|| {
                let at = line_of(source, id)
                    .map(|l| format!("line {l}: "))
                    .unwrap_or_default();
                CliError::Config(format!("{at}unknown atom id {id:?}"))
            })
        };
        let set_of = |ids: &[String]| -> Result<MeasurableSet> {
            let members = ids.iter().map(|id| index(id)).collect::<Result<Vec<_>>>()?;
            Ok(MeasurableSet::new(members))
        };

        let (space, chain) = match &raw.chain {
            Some(ChainSpec {
                edges: Some(edges),
                matrix: None,
                kill,
            }) => {
                if raw.space.weights.is_some() {
                    return Err(CliError::Config(
                        "space.weights must be omitted for a conductance chain; they are derived from the edges".into(),
                    ));
                }
                let edges = edges
                    .iter()
                    .map(|e| Ok((index(&e.from)?, index(&e.to)?, e.conductance)))
                    .collect::<Result<Vec<_>>>()?;
                let mut k = vec![0.0; n];
                for (id, mass) in kill {
                    k[index(id)?] = *mass;
                }
                let chain = MarkovChain::from_conductances(atoms.clone(), &edges, &k)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                (chain.space().clone(), Some(chain))
            }
            Some(ChainSpec {
                matrix: Some(p),
                edges: None,
                kill,
            }) => {
                if !kill.is_empty() {
                    return Err(CliError::Config(
                        "chain.kill applies to conductance chains only".into(),
                    ));
                }
                let space = Self::space(&raw.space)?;
                let p = square(p, n, "chain.matrix")?;
                let chain =
                    MarkovChain::new(&space, p).map_err(|e| CliError::Config(e.to_string()))?;
                (space, Some(chain))
            }
            Some(_) => {
                return Err(CliError::Config(
                    "chain needs exactly one of matrix or edges".into(),
                ))
            }
            None => (Self::space(&raw.space)?, None),
        };

        let operator = match (raw.kernel.kind, &raw.kernel.matrix) {
            (KernelType::Operator, Some(m)) => Some(square(m, n, "kernel.matrix")?),
            (KernelType::Operator, None) => {
                return Err(CliError::Config(
                    "operator kernel needs kernel.matrix".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(CliError::Config(
                    "kernel.matrix is only read for type = \"operator\"".into(),
                ))
            }
            (_, None) => None,
        };
        if raw.kernel.kind == KernelType::Markov && chain.is_none() {
            return Err(CliError::Config(
                "markov kernel needs a [chain] table".into(),
            ));
        }

        let family = raw
            .sets
            .family
            .iter()
            .map(|ids| set_of(ids))
            .collect::<Result<Vec<_>>>()?;

        let partition_chain = if raw.sets.partition_chain.is_empty() {
            None
        } else {
            let mut levels = Vec::new();
            for (k, level) in raw.sets.partition_chain.iter().enumerate() {
                let blocks = level
                    .iter()
                    .map(|b| set_of(b))
                    .collect::<Result<Vec<_>>>()?;
                levels.push(Partition::new(&space, blocks).map_err(|_| {
                    CliError::Config(format!(
                        "partition_chain level {k} is not a partition of the atoms"
                    ))
                })?);
            }
            Some(PartitionChain::new(levels).map_err(|e| match e {
                setkernel::Error::Ordering(k) => CliError::Config(format!(
                    "partition_chain level {k} does not refine level {}",
                    k - 1
                )),
                e => CliError::Config(e.to_string()),
            })?)
        };

        let mut integrands = Vec::new();
        for spec in &raw.integrands {
            if integrands.iter().any(|i: &Integrand| i.name == spec.name) {
                return Err(CliError::Config(format!(
                    "duplicate integrand name {:?}",
                    spec.name
                )));
            }
            let terms = spec
                .terms
                .iter()
                .map(|t| Ok((t.coefficient, set_of(&t.set)?)))
                .collect::<Result<Vec<_>>>()?;
            integrands.push(Integrand {
                name: spec.name.clone(),
                function: SimpleFunction::new(terms),
            });
        }
        let find = |name: &str| -> Result<usize> {
            integrands
                .iter()
                .position(|i| i.name == name)
                .ok_or_else(|| {
                    CliError::Config(format!("cross refers to unknown integrand {name:?}"))
                })
        };
        let cross = raw
            .cross
            .iter()
            .map(|c| Ok((find(&c.left)?, find(&c.right)?)))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            space,
            chain,
            kernel_type: raw.kernel.kind,
            operator,
            family,
            partition_chain,
            integrands,
            cross,
            mc: MonteCarlo {
                n_samples: raw.mc.n_samples,
                seed: raw.mc.seed,
            },
            tolerances: raw.tolerances,
        })
    }

    fn space(spec: &SpaceSpec) -> Result<MeasureSpace> {
        let weights = spec
            .weights
            .clone()
            .ok_or_else(|| CliError::Config("space.weights is required".into()))?;
        MeasureSpace::new(spec.atoms.clone(), weights).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Builds the kernel. Failures here (indefinite operator, recurrent
    /// chain) are reported as check failures rather than config errors.
    pub fn kernel(&self) -> setkernel::Result<SetKernel> {
        match self.kernel_type {
            KernelType::Wiener => Ok(SetKernel::wiener(&self.space)),
            KernelType::RankOne => Ok(SetKernel::rank_one(&self.space)),
            KernelType::Counting => Ok(SetKernel::counting(&self.space)),
            KernelType::Operator => SetKernel::operator(
                &self.space,
                self.operator.clone().expect("resolved with a matrix"),
            ),
            KernelType::Markov => green_kernel(self.chain.as_ref().expect("resolved with a chain")),
        }
    }

    /// Singletons followed by the family sets not already among them.
    pub fn probe_sets(&self) -> Vec<MeasurableSet> {
        let mut sets = self.space.singletons();
        for s in &self.family {
            if !sets.contains(s) {
                sets.push(s.clone());
            }
        }
        sets
    }

    /// Configured integrands, or `χ_A` for every family set when none are
    /// given.
    pub fn integrands_or_default(&self) -> Vec<Integrand> {
        if !self.integrands.is_empty() {
            return self.integrands.clone();
        }
        self.family
            .iter()
            .map(|a| Integrand {
                name: format!("chi{}", self.set_label(a)),
                function: SimpleFunction::indicator(a.clone()),
            })
            .collect()
    }

    /// `{a,b}` with atom ids.
    pub fn set_label(&self, a: &MeasurableSet) -> String {
        let ids: Vec<&str> = a.iter().map(|i| self.space.atoms()[i].as_str()).collect();
        format!("{{{}}}", ids.join(","))
    }

    /// The configured chain, or `{X}` followed by the singletons.
    pub fn partition_chain_or_default(&self) -> PartitionChain {
        self.partition_chain.clone().unwrap_or_else(|| {
            PartitionChain::new(vec![
                Partition::trivial(&self.space),
                Partition::singletons(&self.space),
            ])
            .expect("singletons refine the trivial partition")
        })
    }
}
