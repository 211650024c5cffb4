//! Propagation model and payoffs of the jamming game.
//!
//! The access point sits at the origin of a half-line; the receiver and the
//! jammer occupy coordinates in `[L, M]`. Two payoff models are provided:
//!
//! * [`value`], the normalized zero-sum value `|x - y|^α / x^α`, used as the
//!   reward of the noiseless games;
//! * [`spectral_efficiency`], `log2(1 + SNJR)` under a log-distance path loss
//!   with optional log-normal shadowing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// JSON has no infinities; `-inf` (noise disabled) travels as the string `"-inf"`.
mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

/// Fixed term of the vehicular log-distance path loss, in dB at 1 m.
pub const PATH_LOSS_AT_1M_DB: f64 = 47.86;

/// Distances below this are evaluated at this value; the pure power law diverges at 0.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Physical parameters of a scenario.
///
/// Powers are in dBm, the noise density in dBm/Hz. A noise density of `-inf`
/// disables thermal noise entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub l: f64,
    pub m: f64,
    pub alpha: f64,
    pub p_tx_dbm: f64,
    pub p_j_dbm: f64,
    #[serde(with = "extended_float")]
    pub noise_density_dbm_hz: f64,
    pub bandwidth_hz: f64,
    /// Variance (not standard deviation) of the shadowing term, in dB.
    pub shadow_var_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            l: 10.0,
            m: 50.0,
            alpha: 2.0,
            p_tx_dbm: 23.0,
            p_j_dbm: 23.0,
            noise_density_dbm_hz: -174.0,
            bandwidth_hz: 20e6,
            shadow_var_db: 0.0,
        }
    }
}

impl ScenarioConfig {
    /// Noise-free scenario with equal powers: the SNJR reduces to [`value`].
    pub fn noiseless(l: f64, m: f64, alpha: f64) -> Result<Self> {
        Self {
            l,
            m,
            alpha,
            noise_density_dbm_hz: f64::NEG_INFINITY,
            ..Self::default()
        }
        .validated()
    }

    /// 802.11p-like vehicular link: 23 dBm on both sides, 20 MHz, -174 dBm/Hz.
    pub fn vehicular(l: f64, m: f64, alpha: f64, shadow_var_db: f64) -> Result<Self> {
        Self {
            l,
            m,
            alpha,
            shadow_var_db,
            ..Self::default()
        }
        .validated()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.l, self.m, self.alpha, self.p_tx_dbm, self.p_j_dbm, self.bandwidth_hz, self.shadow_var_db];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("scenario parameters must be finite".into()));
        }
        if !(self.l > 0.0 && self.l < self.m) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < L < M, got L = {}, M = {}",
                self.l, self.m
            )));
        }
        if self.alpha < 1.0 {
            return Err(Error::InvalidConfig(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if self.shadow_var_db < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "shadowing variance must be >= 0, got {}",
                self.shadow_var_db
            )));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        if self.noise_density_dbm_hz.is_nan() || self.noise_density_dbm_hz == f64::INFINITY {
            return Err(Error::InvalidConfig("noise density must be a number or -inf".into()));
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Noise power ν₀ = N₀·B in milliwatts.
    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_density_dbm_hz) * self.bandwidth_hz
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_mw() == 0.0
    }

    /// Overrides fields present in `kv`; unknown keys are left to the caller.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let fields: [(&str, &mut f64); 8] = [
            ("l", &mut self.l),
            ("m", &mut self.m),
            ("alpha", &mut self.alpha),
            ("p_tx_dbm", &mut self.p_tx_dbm),
            ("p_j_dbm", &mut self.p_j_dbm),
            ("noise_density_dbm_hz", &mut self.noise_density_dbm_hz),
            ("bandwidth_hz", &mut self.bandwidth_hz),
            ("shadow_var_db", &mut self.shadow_var_db),
        ];
        for (key, slot) in fields {
            if let Some(v) = kv.get_parsed::<f64>(key)? {
                *slot = v;
            }
        }
        self.validate()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("l", self.l);
        kv.insert("m", self.m);
        kv.insert("alpha", self.alpha);
        kv.insert("p_tx_dbm", self.p_tx_dbm);
        kv.insert("p_j_dbm", self.p_j_dbm);
        kv.insert("noise_density_dbm_hz", self.noise_density_dbm_hz);
        kv.insert("bandwidth_hz", self.bandwidth_hz);
        kv.insert("shadow_var_db", self.shadow_var_db);
        kv
    }
}

/// Receiver coordinate `x` and jammer coordinate `y`, both in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionPair {
    pub x: f64,
    pub y: f64,
}

impl PositionPair {
    pub fn new(x: f64, y: f64, cfg: &ScenarioConfig) -> Result<Self> {
        let inside = |v: f64| v >= cfg.l && v <= cfg.m;
        if !inside(x) || !inside(y) {
            return Err(Error::Domain(format!(
                "positions ({x}, {y}) outside [{}, {}]",
                cfg.l, cfg.m
            )));
        }
        Ok(Self { x, y })
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Normalized game value `|x - y|^α / x^α`; exactly zero when `x == y`.
pub fn value(x: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("receiver coordinate must be positive, got {x}")));
    }
    if x == y {
        return Ok(0.0);
    }
    Ok(((x - y).abs() / x).powf(alpha))
}

/// Channel gain in dB: `-(47.86 + 10·α·log10(d) + shadow)`, with `d` floored at 1 m.
pub fn channel_gain_db(distance: f64, alpha: f64, shadow_db: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    let d = distance.max(MIN_DISTANCE_M);
    Ok(-(PATH_LOSS_AT_1M_DB + 10.0 * alpha * d.log10() + shadow_db))
}

fn jammer_distance(pair: PositionPair) -> f64 {
    (pair.x - pair.y).abs().max(MIN_DISTANCE_M)
}

/// Signal-to-noise-plus-jamming ratio (linear) for given shadowing realizations.
pub fn snjr(pair: PositionPair, cfg: &ScenarioConfig, shadow_r_db: f64, shadow_j_db: f64) -> Result<f64> {
    let g_r = db_to_linear(channel_gain_db(pair.x, cfg.alpha, shadow_r_db)?);
    let g_j = db_to_linear(channel_gain_db(jammer_distance(pair), cfg.alpha, shadow_j_db)?);
    Ok(g_r * dbm_to_mw(cfg.p_tx_dbm) / (cfg.noise_mw() + g_j * dbm_to_mw(cfg.p_j_dbm)))
}

/// Draws one shadowing realization in dB; zero when the variance is zero.
pub fn draw_shadowing<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    if cfg.shadow_var_db == 0.0 {
        return 0.0;
    }
    // validated config: the standard deviation is finite and positive
    Normal::new(0.0, cfg.shadow_var_db.sqrt())
        .expect("valid shadowing deviation")
        .sample(rng)
}

/// `log2(1 + SNJR)` with independent shadowing on the AP link and the jammer link.
pub fn spectral_efficiency<R: Rng + ?Sized>(pair: PositionPair, cfg: &ScenarioConfig, rng: &mut R) -> Result<f64> {
    let shadow_r = draw_shadowing(cfg, rng);
    let shadow_j = draw_shadowing(cfg, rng);
    Ok((1.0 + snjr(pair, cfg, shadow_r, shadow_j)?).log2())
}
