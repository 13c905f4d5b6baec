//! Run configuration shared by the command line and TOML files.
//!
//! Every key is optional. A file given with `--config` is read first and
//! flags override it field by field; unknown keys are rejected. Lengths are
//! in pixels of the (possibly resized) input.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stripe_core::detect::{Algorithm, Criterion, DetectorConfig, DirectionPolicy};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Topo,
    Convergence,
    Tensor,
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// TOML file with any of these keys; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Directory for all outputs (created if missing).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    /// Seed for every random draw; 0 when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Gaussian noise level, in percent of the mean signal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_percent: Option<f64>,

    /// Input image (PGM, PNG) or CSV matrix.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Phantom description (TOML); the built-in phantom when absent.
    #[arg(long, help_heading = "Simulation")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PathBuf>,

    /// Detection algorithm: 1 fixed coefficient, 2 Hessian eigenvalues,
    /// 3 coefficient updates.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algo: Option<u8>,

    /// Derivative order of the smoother.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,

    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,

    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,

    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,

    /// Stripe half-length.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,

    /// Width of the excluded border.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,

    /// Exclusion radius around inserted stripes.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,

    /// Insertions between coefficient updates (algorithm 3).
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,

    /// `lemma` or `paper-text`.
    #[arg(long, value_parser = parse_enum::<DirectionPolicy>, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_policy: Option<DirectionPolicy>,

    /// `grad-norm` or `eigen-m2`.
    #[arg(long, value_parser = parse_enum::<Criterion>, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,

    /// Stop after this many segments.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_segments: Option<usize>,

    /// Relative residual of the conjugate-gradient solves.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_tol: Option<f64>,

    /// Iteration cap of each conjugate-gradient solve.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_max_iter: Option<usize>,

    /// Box-filter the input to N×N pixels first.
    #[arg(long, help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resize: Option<usize>,

    /// Divide the input by its maximum (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,

    /// Write overlay.png (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Detection")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<bool>,

    /// `topo`, `convergence`, `tensor` or `all`.
    #[arg(long, value_parser = parse_enum::<Check>, help_heading = "Validation")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<Check>,

    /// Stripe half-lengths of the asymptotics check.
    #[arg(long, value_delimiter = ',', value_parser = parse_length, help_heading = "Validation")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,

    /// Pixel sizes of the convergence study; fractions such as 1/64 work.
    #[arg(long, value_delimiter = ',', value_parser = parse_length, help_heading = "Validation")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
}

/// Parses a snake_case serde enum, accepting dashes for underscores.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// A positive number, optionally written as a fraction `a/b`.
pub fn parse_length(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number {s:?}"))?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not a positive length"))
    }
}

macro_rules! overlay_fields {
    ($base:expr, $top:expr, $($f:ident),* $(,)?) => {
        RunConfig { config: $top.config.or($base.config), $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fields of `self` take precedence over those of `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        overlay_fields!(
            base,
            self,
            out_dir,
            seed,
            noise_percent,
            input,
            phantom,
            algo,
            m,
            alpha,
            kappa,
            beta,
            eps,
            delta0,
            rho0,
            s,
            direction_policy,
            criterion,
            max_segments,
            cg_tol,
            cg_max_iter,
            resize,
            normalize,
            overlay,
            check,
            eps_list,
            h_list,
        )
    }

    /// Merges the file named by `--config`, if any, beneath these flags.
    pub fn resolve(self) -> CliResult<RunConfig> {
        match &self.config {
            Some(path) => {
                let file = Self::load(path)?;
                Ok(self.over(file))
            }
            None => Ok(self),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn algorithm(&self) -> CliResult<Algorithm> {
        match self.algo.unwrap_or(1) {
            1 => Ok(Algorithm::NoUpdate),
            2 => Ok(Algorithm::EigenM2),
            3 => Ok(Algorithm::WithUpdate),
            a => Err(CliError::Config(format!("--algo must be 1, 2 or 3, got {a}"))),
        }
    }

    /// Defaults of the experiment matching `--algo` and `--m` on a unit
    /// pixel grid, with every explicit flag applied on top.
    pub fn detector(&self) -> CliResult<DetectorConfig> {
        let algo = self.algo.unwrap_or(1);
        let m = self.m.unwrap_or(2);
        self.algorithm()?;
        if algo == 2 && m != 2 {
            return Err(CliError::Config(format!("algorithm 2 needs m = 2, got m = {m}")));
        }
        let mut cfg = DetectorConfig::table1(algo, m, 1.0)?;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(alpha, kappa, beta, eps, delta0, rho0, s, direction_policy, criterion, cg_tol);
        if self.max_segments.is_some() {
            cfg.max_segments = self.max_segments;
        }
        if self.cg_max_iter.is_some() {
            cfg.cg_max_iter = self.cg_max_iter;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
