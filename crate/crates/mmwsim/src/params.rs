//! Large-scale model parameter cards.
//!
//! A [`BandParameters`] card collects, for one carrier frequency, the fitted
//! path-loss lines, shadowing deviations, cluster count / power / spread
//! statistics and the LOS-NLOS-outage state curve parameters.  Built-in
//! presets carry the published NYC fits at 28 and 73 GHz; cards can also be
//! loaded from and written to a flat `key = value` text format.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Full parameter card for one carrier frequency.
///
/// Angular spread means are in degrees, path-loss intercepts and deviations
/// in dB.  `a_out` and `a_los` are in 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct BandParameters {
    pub carrier_freq_ghz: f64,
    pub nlos_alpha: f64,
    pub nlos_beta: f64,
    pub nlos_sigma: f64,
    pub los_alpha: f64,
    pub los_beta: f64,
    pub los_sigma: f64,
    /// Mean of the (pre-censoring) Poisson cluster count.
    pub lambda_k: f64,
    /// Delay scaling exponent of the cluster power law.
    pub r_tau: f64,
    /// Lognormal per-cluster power deviation, dB.
    pub zeta: f64,
    pub bs_az_spread_mean: f64,
    pub bs_el_spread_mean: f64,
    pub ue_az_spread_mean: f64,
    pub ue_el_spread_mean: f64,
    pub a_out: f64,
    pub b_out: f64,
    pub a_los: f64,
}

impl BandParameters {
    /// NYC 28 GHz fit.  The NLOS path-loss row is the street-level fit; the
    /// link-state parameters are the 42-location ML fit.
    pub fn preset_28ghz_nyc() -> Self {
        BandParameters {
            carrier_freq_ghz: 28.0,
            nlos_alpha: 72.0,
            nlos_beta: 2.92,
            nlos_sigma: 8.7,
            los_alpha: 61.4,
            los_beta: 2.0,
            los_sigma: 5.8,
            lambda_k: 1.8,
            r_tau: 2.8,
            zeta: 4.0,
            bs_az_spread_mean: 10.2,
            bs_el_spread_mean: 0.0,
            ue_az_spread_mean: 15.5,
            ue_el_spread_mean: 6.0,
            a_out: 0.0334,
            b_out: 5.2,
            a_los: 0.0149,
        }
    }

    /// NYC 73 GHz fit.  NLOS row is the 2.0 m mobile-height fit; link-state
    /// parameters reuse the 28 GHz curve.
    pub fn preset_73ghz_nyc() -> Self {
        BandParameters {
            carrier_freq_ghz: 73.0,
            nlos_alpha: 82.7,
            nlos_beta: 2.69,
            nlos_sigma: 7.7,
            los_alpha: 69.8,
            los_beta: 2.0,
            los_sigma: 5.8,
            lambda_k: 1.9,
            r_tau: 3.0,
            zeta: 4.0,
            bs_az_spread_mean: 10.5,
            bs_el_spread_mean: 0.0,
            ue_az_spread_mean: 15.4,
            ue_el_spread_mean: 3.5,
            a_out: 0.0334,
            b_out: 5.2,
            a_los: 0.0149,
        }
    }

    /// Resolve a preset by its registry name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "28ghz-nyc" => Some(Self::preset_28ghz_nyc()),
            "73ghz-nyc" => Some(Self::preset_73ghz_nyc()),
            _ => None,
        }
    }

    /// Check the card's structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::InsufficientData(format!("invalid band parameters: {msg}")))
        };
        if self.nlos_sigma <= 0.0 || self.los_sigma <= 0.0 {
            return bad("sigmas must be > 0");
        }
        if self.lambda_k <= 0.0 {
            return bad("lambda_k must be > 0");
        }
        if self.r_tau <= 1.0 {
            return bad("r_tau must be > 1");
        }
        if self.a_out <= 0.0 || self.a_los <= 0.0 {
            return bad("a_out and a_los must be > 0");
        }
        if self.bs_az_spread_mean < 0.0
            || self.bs_el_spread_mean < 0.0
            || self.ue_az_spread_mean < 0.0
            || self.ue_el_spread_mean < 0.0
        {
            return bad("spread means must be >= 0");
        }
        Ok(())
    }

    /// Emit the card in the flat `key = value` text format.
    pub fn to_card(&self) -> String {
        let mut s = String::from("[band]\n");
        let mut kv = |k: &str, v: f64| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("carrier_freq_ghz", self.carrier_freq_ghz);
        kv("nlos_alpha", self.nlos_alpha);
        kv("nlos_beta", self.nlos_beta);
        kv("nlos_sigma", self.nlos_sigma);
        kv("los_alpha", self.los_alpha);
        kv("los_beta", self.los_beta);
        kv("los_sigma", self.los_sigma);
        kv("lambda_k", self.lambda_k);
        kv("r_tau", self.r_tau);
        kv("zeta", self.zeta);
        kv("bs_az_spread_mean", self.bs_az_spread_mean);
        kv("bs_el_spread_mean", self.bs_el_spread_mean);
        kv("ue_az_spread_mean", self.ue_az_spread_mean);
        kv("ue_el_spread_mean", self.ue_el_spread_mean);
        kv("a_out", self.a_out);
        kv("b_out", self.b_out);
        kv("a_los", self.a_los);
        s
    }

    /// Parse a card from the flat text format produced by [`Self::to_card`].
    pub fn from_card(text: &str) -> Result<Self> {
        // Start from the 28 GHz preset so a card may override only a subset.
        let mut p = Self::preset_28ghz_nyc();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            let v: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid number {:?} for key {key}", value.trim()),
            })?;
            match key {
                "carrier_freq_ghz" => p.carrier_freq_ghz = v,
                "nlos_alpha" => p.nlos_alpha = v,
                "nlos_beta" => p.nlos_beta = v,
                "nlos_sigma" => p.nlos_sigma = v,
                "los_alpha" => p.los_alpha = v,
                "los_beta" => p.los_beta = v,
                "los_sigma" => p.los_sigma = v,
                "lambda_k" => p.lambda_k = v,
                "r_tau" => p.r_tau = v,
                "zeta" => p.zeta = v,
                "bs_az_spread_mean" => p.bs_az_spread_mean = v,
                "bs_el_spread_mean" => p.bs_el_spread_mean = v,
                "ue_az_spread_mean" => p.ue_az_spread_mean = v,
                "ue_el_spread_mean" => p.ue_el_spread_mean = v,
                "a_out" => p.a_out = v,
                "b_out" => p.b_out = v,
                "a_los" => p.a_los = v,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        p.validate()?;
        Ok(p)
    }
}
