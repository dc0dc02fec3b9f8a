//! Run configuration: flat `key = value` text with `#` comments and one-dot section keys.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nlw_model::NlwConfig;

#[derive(Clone, Debug, Serialize)]
pub struct SolverBlock {
    pub q_max: i32,
    pub kmax: usize,
    pub eta: f64,
    pub levels: usize,
    pub order: usize,
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub residual_tol: f64,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyBlock {
    pub amplitudes: Vec<f64>,
    pub omega: Option<Vec<f64>>,
    pub k: f64,
    pub nu: Option<f64>,
    pub q_cap: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureBlock {
    pub omega_box: Vec<(f64, f64)>,
    pub samples: usize,
    pub k_grid: Vec<f64>,
    pub levels: usize,
    pub kmax: usize,
    pub q_cap: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyBlock {
    pub tol_fp: f64,
    pub amplitudes: Vec<f64>,
    pub pde_c: f64,
    pub pde_dt: f64,
    pub nx: usize,
    pub freq_tol: f64,
    pub lindstedt_order: usize,
    pub lindstedt_h: f64,
    pub lindstedt_tol: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub model: NlwConfig,
    pub solver: SolverBlock,
    pub frequency: FrequencyBlock,
    pub measure: MeasureBlock,
    pub verify: VerifyBlock,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// original text, echoed into every run record
    #[serde(skip)]
    pub text: String,
}

const KEYS: &[&str] = &[
    "seed",
    "output.dir",
    "model.m",
    "model.f",
    "model.tangential",
    "model.n_space",
    "solver.q_max",
    "solver.kmax",
    "solver.eta",
    "solver.levels",
    "solver.order",
    "solver.s",
    "solver.tol",
    "solver.max_iter",
    "solver.residual_tol",
    "solver.lambda",
    "solver.delta",
    "frequency.amplitudes",
    "frequency.omega",
    "frequency.k",
    "frequency.nu",
    "frequency.q_cap",
    "measure.box",
    "measure.samples",
    "measure.k_grid",
    "measure.levels",
    "measure.kmax",
    "measure.q_cap",
    "verify.tol_fp",
    "verify.amplitudes",
    "verify.pde_c",
    "verify.pde_dt",
    "verify.nx",
    "verify.freq_tol",
    "verify.lindstedt_order",
    "verify.lindstedt_h",
    "verify.lindstedt_tol",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.matches('.').count() > 1 || k.is_empty() {
                return Err(Error::Config(format!("line {line_no}: key `{k}` nests deeper than one section")));
            }
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {line_no}: unknown key `{k}`")));
            }
            if let Some((prev, _)) = map.insert(k.to_string(), (line_no, v.to_string())) {
                return Err(Error::Config(format!("line {line_no}: key `{k}` already set on line {prev}")));
            }
        }
        Ok(Self { map })
    }

    fn bad(&self, key: &str, why: impl std::fmt::Display) -> Error {
        match self.map.get(key) {
            Some((line, v)) => Error::Config(format!("line {line}: key `{key}` = `{v}`: {why}")),
            None => Error::Config(format!("key `{key}`: {why}")),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|e| self.bad(key, e)),
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| self.bad(key, e)))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let model_keys = ["model.m", "model.f", "model.tangential", "model.n_space"];
        for k in model_keys {
            if !e.map.contains_key(k) {
                return Err(Error::Config(format!("key `{k}`: missing from the model block")));
            }
        }
        let model = NlwConfig {
            m: e.get("model.m", 1.0)?,
            f_coeffs: e.list("model.f")?.unwrap_or_default(),
            tangential_set: e.list("model.tangential")?.unwrap_or_default(),
            n_space: e.get("model.n_space", 8)?,
        };
        model.validate().map_err(|err| e.bad("model.tangential", err))?;
        let d = model.d();

        let solver = SolverBlock {
            q_max: e.get("solver.q_max", 6)?,
            kmax: e.get("solver.kmax", 6)?,
            eta: e.get("solver.eta", 0.5)?,
            levels: e.get("solver.levels", 6)?,
            order: e.get("solver.order", 2)?,
            s: e.get("solver.s", 2.0)?,
            tol: e.get("solver.tol", 1e-14)?,
            max_iter: e.get("solver.max_iter", 40)?,
            residual_tol: e.get("solver.residual_tol", 1e-10)?,
            lambda: e.opt("solver.lambda")?,
            delta: e.opt("solver.delta")?,
        };
        if !(solver.eta > 0.0 && solver.eta < 1.0) {
            return Err(e.bad("solver.eta", "must lie in (0, 1)"));
        }
        if solver.levels == 0 {
            return Err(e.bad("solver.levels", "must be at least 1"));
        }
        if solver.order == 0 || solver.order > 4 {
            return Err(e.bad("solver.order", "supported jet orders are 1..=4"));
        }

        let amplitudes = e.list("frequency.amplitudes")?.unwrap_or_else(|| vec![1e-2; d]);
        if amplitudes.len() != d {
            return Err(e.bad("frequency.amplitudes", format!("expected {d} values")));
        }
        let omega: Option<Vec<f64>> = e.list("frequency.omega")?;
        if omega.as_ref().is_some_and(|w| w.len() != d) {
            return Err(e.bad("frequency.omega", format!("expected {d} values")));
        }
        let frequency = FrequencyBlock {
            amplitudes,
            omega,
            k: e.get("frequency.k", 1e-8)?,
            nu: e.opt("frequency.nu")?,
            q_cap: e.get("frequency.q_cap", 32)?,
        };

        let flat_box: Vec<f64> = e.list("measure.box")?.unwrap_or_else(|| [1.0, 2.0].repeat(d));
        if flat_box.len() != 2 * d {
            return Err(e.bad("measure.box", format!("expected {} values lo,hi per dimension", 2 * d)));
        }
        let measure = MeasureBlock {
            omega_box: flat_box.chunks(2).map(|c| (c[0], c[1])).collect(),
            samples: e.get("measure.samples", 10_000)?,
            k_grid: e.list("measure.k_grid")?.unwrap_or_else(|| vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]),
            levels: e.get("measure.levels", 4)?,
            kmax: e.get("measure.kmax", 140)?,
            q_cap: e.get("measure.q_cap", 32)?,
        };

        let verify = VerifyBlock {
            tol_fp: e.get("verify.tol_fp", 1e-10)?,
            amplitudes: e.list("verify.amplitudes")?.unwrap_or_else(|| vec![1e-3, 2e-3, 5e-3, 1e-2]),
            pde_c: e.get("verify.pde_c", 1.0)?,
            pde_dt: e.get("verify.pde_dt", 0.01)?,
            nx: e.get("verify.nx", 64)?,
            freq_tol: e.get("verify.freq_tol", 1e-2)?,
            lindstedt_order: e.get("verify.lindstedt_order", 2)?,
            lindstedt_h: e.get("verify.lindstedt_h", 1e-4)?,
            lindstedt_tol: e.get("verify.lindstedt_tol", 1e-6)?,
        };
        if verify.lindstedt_order > 3 {
            return Err(e.bad("verify.lindstedt_order", "finite differences give orders up to 3"));
        }

        Ok(Self {
            model,
            solver,
            frequency,
            measure,
            verify,
            out: e.opt::<String>("output.dir")?.map(PathBuf::from),
            seed: e.get("seed", 0)?,
            text: text.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Hex SHA-256 over the given inputs, each length-prefixed.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
