//! Latency and quality-of-service scoring for LLM service configurations.
//!
//! A service's QoS is a convex blend of user satisfaction and a latency term,
//! where latency is the sum of link transmission, tokenization and model
//! inference time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_finite, ValidationError};

/// Bits per kilobyte, as used for the link-transfer term.
const BITS_PER_KB: f64 = 8000.0;

/// Two q values closer than this are reported as duplicates.
pub const DUPLICATE_Q_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("cannot build a QoS table from an empty service list")]
    EmptyTable,
}

/// One deployable service option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub id: u32,
    /// Input payload, KB.
    pub d_in: f64,
    /// Output payload, KB.
    pub d_out: f64,
    /// Parameter count in units of 10^9 parameters.
    pub beta: f64,
    pub n_layer: u64,
    pub n_ctx: u64,
    pub n_attn: u64,
    /// Probability that the response meets the user's expectation.
    pub satisfaction: f64,
    /// Listed compute throughput, GFLOPS.
    pub gamma_gflops: f64,
    /// Per-request liability surcharge.
    #[serde(default)]
    pub liability: f64,
    #[serde(default)]
    pub model_label: String,
    /// Reference q value to compare against when reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_q: Option<f64>,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, value) in [
            ("d_in", self.d_in),
            ("d_out", self.d_out),
            ("beta", self.beta),
            ("satisfaction", self.satisfaction),
            ("gamma_gflops", self.gamma_gflops),
            ("liability", self.liability),
        ] {
            ensure_finite(value, name)?;
        }
        ensure(self.d_in >= 0.0, "d_in", "input size must be nonnegative")?;
        ensure(self.d_out >= 0.0, "d_out", "output size must be nonnegative")?;
        ensure(self.beta >= 0.0, "beta", "parameter count must be nonnegative")?;
        ensure(
            self.gamma_gflops > 0.0,
            "gamma_gflops",
            "compute throughput must be positive",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.satisfaction),
            "satisfaction",
            "satisfaction must lie in [0, 1]",
        )?;
        ensure(self.liability >= 0.0, "liability", "liability must be nonnegative")?;
        if let Some(q) = self.expected_q {
            ensure_finite(q, "expected_q")?;
        }
        Ok(())
    }
}

/// Physical and task constants shared by every service in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    /// Link rate, bits per second.
    pub rate_bps: f64,
    /// Tokenization time, seconds per input KB.
    pub alpha_tok: f64,
    /// Detokenization time, seconds per output KB.
    pub alpha_detok: f64,
    #[serde(default = "default_tokens_per_kb")]
    pub tokens_per_kb_in: f64,
    #[serde(default = "default_tokens_per_kb")]
    pub tokens_per_kb_out: f64,
    /// Weight on satisfaction versus latency.
    pub delta: f64,
    /// Multiplier applied to every listed GFLOPS figure.
    #[serde(default = "default_gamma_calibration")]
    pub gamma_calibration: f64,
    #[serde(default)]
    pub task_label: String,
}

fn default_tokens_per_kb() -> f64 {
    4.0
}

fn default_gamma_calibration() -> f64 {
    10.0
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            rate_bps: 20e6,
            alpha_tok: 5e-4,
            alpha_detok: 5e-4,
            tokens_per_kb_in: default_tokens_per_kb(),
            tokens_per_kb_out: default_tokens_per_kb(),
            delta: 0.5,
            gamma_calibration: default_gamma_calibration(),
            task_label: String::new(),
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, value) in [
            ("rate_bps", self.rate_bps),
            ("alpha_tok", self.alpha_tok),
            ("alpha_detok", self.alpha_detok),
            ("tokens_per_kb_in", self.tokens_per_kb_in),
            ("tokens_per_kb_out", self.tokens_per_kb_out),
            ("delta", self.delta),
            ("gamma_calibration", self.gamma_calibration),
        ] {
            ensure_finite(value, name)?;
        }
        ensure(self.rate_bps > 0.0, "rate_bps", "link rate must be positive")?;
        ensure(self.alpha_tok >= 0.0, "alpha_tok", "must be nonnegative")?;
        ensure(self.alpha_detok >= 0.0, "alpha_detok", "must be nonnegative")?;
        ensure(self.tokens_per_kb_in >= 0.0, "tokens_per_kb_in", "must be nonnegative")?;
        ensure(self.tokens_per_kb_out >= 0.0, "tokens_per_kb_out", "must be nonnegative")?;
        ensure(
            (0.0..=1.0).contains(&self.delta),
            "delta",
            "satisfaction weight must lie in [0, 1]",
        )?;
        ensure(
            self.gamma_calibration > 0.0,
            "gamma_calibration",
            "throughput calibration must be positive",
        )?;
        Ok(())
    }

    /// Effective throughput in FLOP/s for a service.
    pub fn effective_flops(&self, cfg: &ServiceConfig) -> f64 {
        cfg.gamma_gflops * 1e9 * self.gamma_calibration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub t_tran: f64,
    pub t_tok: f64,
    pub t_inf: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosLevel {
    pub id: u32,
    /// Unclamped score; drops below zero when latency exceeds a second.
    pub q_raw: f64,
    /// Score clamped to [0, 1].
    pub q: f64,
    pub latency: LatencyBreakdown,
    pub satisfaction: f64,
    /// Set when total latency exceeds 1 s and the latency term is negative.
    pub latency_warning: bool,
}

fn check(cfg: &ServiceConfig, env: &Environment) -> Result<(), QosError> {
    cfg.validate()?;
    env.validate()?;
    Ok(())
}

pub fn transmission_time(cfg: &ServiceConfig, env: &Environment) -> Result<f64, QosError> {
    check(cfg, env)?;
    Ok(BITS_PER_KB * (cfg.d_in + cfg.d_out) / env.rate_bps)
}

pub fn tokenization_time(cfg: &ServiceConfig, env: &Environment) -> Result<f64, QosError> {
    check(cfg, env)?;
    Ok(env.alpha_tok * cfg.d_in + env.alpha_detok * cfg.d_out)
}

/// Forward-pass FLOPs per token: twice the parameter count plus the
/// attention-context term.
pub fn flops_per_token(cfg: &ServiceConfig) -> f64 {
    let shape = cfg.n_layer as f64 * cfg.n_ctx as f64 * cfg.n_attn as f64;
    2.0 * (cfg.beta * 1e9) + 2.0 * shape
}

/// Input plus output token count under the linear KB-to-token maps.
pub fn token_count(cfg: &ServiceConfig, env: &Environment) -> f64 {
    env.tokens_per_kb_in * cfg.d_in + env.tokens_per_kb_out * cfg.d_out
}

pub fn inference_time(cfg: &ServiceConfig, env: &Environment) -> Result<f64, QosError> {
    check(cfg, env)?;
    Ok(token_count(cfg, env) * flops_per_token(cfg) / env.effective_flops(cfg))
}

pub fn total_latency(cfg: &ServiceConfig, env: &Environment) -> Result<LatencyBreakdown, QosError> {
    let t_tran = transmission_time(cfg, env)?;
    let t_tok = tokenization_time(cfg, env)?;
    let t_inf = inference_time(cfg, env)?;
    Ok(LatencyBreakdown {
        t_tran,
        t_tok,
        t_inf,
        t_total: t_tran + t_tok + t_inf,
    })
}

pub fn qos_score(cfg: &ServiceConfig, env: &Environment) -> Result<QosLevel, QosError> {
    let latency = total_latency(cfg, env)?;
    let q_raw = env.delta * cfg.satisfaction + (1.0 - env.delta) * (1.0 - latency.t_total);
    Ok(QosLevel {
        id: cfg.id,
        q_raw,
        q: q_raw.clamp(0.0, 1.0),
        latency,
        satisfaction: cfg.satisfaction,
        latency_warning: latency.t_total > 1.0,
    })
}

/// Scores for a batch of services.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosTable {
    /// Levels in input order.
    pub levels: Vec<QosLevel>,
    /// Indices into `levels`, ordered by ascending q (stable on ties).
    pub ascending: Vec<usize>,
    /// Groups of service ids whose q values coincide.
    pub duplicates: Vec<Vec<u32>>,
}

impl QosTable {
    pub fn sorted(&self) -> impl Iterator<Item = &QosLevel> {
        self.ascending.iter().map(move |&i| &self.levels[i])
    }

    pub fn is_strictly_ascending(&self) -> bool {
        self.levels.windows(2).all(|w| w[0].q < w[1].q)
    }
}

pub fn qos_table(configs: &[ServiceConfig], env: &Environment) -> Result<QosTable, QosError> {
    if configs.is_empty() {
        return Err(QosError::EmptyTable);
    }
    let levels = configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            qos_score(cfg, env).map_err(|e| match e {
                QosError::Invalid(v) => QosError::Invalid(v.under(&format!("[{i}]"))),
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ascending: Vec<usize> = (0..levels.len()).collect();
    ascending.sort_by(|&a, &b| levels[a].q.total_cmp(&levels[b].q));

    let mut duplicates = Vec::new();
    let mut group = vec![ascending[0]];
    for &idx in &ascending[1..] {
        let prev = *group.last().unwrap();
        if (levels[idx].q - levels[prev].q).abs() <= DUPLICATE_Q_TOLERANCE {
            group.push(idx);
        } else {
            if group.len() > 1 {
                duplicates.push(group.iter().map(|&i| levels[i].id).collect());
            }
            group = vec![idx];
        }
    }
    if group.len() > 1 {
        duplicates.push(group.iter().map(|&i| levels[i].id).collect());
    }

    Ok(QosTable {
        levels,
        ascending,
        duplicates,
    })
}
