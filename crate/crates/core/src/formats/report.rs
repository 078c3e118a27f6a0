//! Benchmark reports: TOML for people, CSV for plotting.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AxError, Result};
use crate::profile::PhaseTimes;

use super::{read_file, write_file};

pub const PHASE_NAMES: [&str; 4] = [
    "lut_lookup",
    "quant_dequant_minmax",
    "init",
    "im2cols_gemm_other",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShare {
    pub name: String,
    pub seconds: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub name: String,
    pub kind: String,
    /// Summed over all timed batches.
    pub seconds: f64,
}

/// Timing of one inference run split as `t_init + t_comp`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub engine: String,
    #[serde(default)]
    pub lut: String,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub images: usize,
    #[serde(default)]
    pub batches: usize,
    /// Loading, allocation and the warmup batch.
    pub t_init: f64,
    /// Steady-state processing of all batches.
    pub t_comp: f64,
    /// Lookup multiply-accumulates over all timed batches.
    #[serde(default)]
    pub mac_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1_agreement: Option<f64>,
    #[serde(default)]
    pub phases: Vec<PhaseShare>,
    #[serde(default)]
    pub layers: Vec<LayerTiming>,
}

impl RunReport {
    pub fn total(&self) -> f64 {
        self.t_init + self.t_comp
    }

    /// Fills `phases` from measured computation phases; whatever part of
    /// `t_comp` the phases do not cover is counted as other work.
    pub fn set_phases(&mut self, comp: &PhaseTimes) {
        let lut = comp.lut_lookup.as_secs_f64();
        let quant = comp.quant_dequant_minmax.as_secs_f64();
        let other = (self.t_comp - lut - quant).max(0.0);
        let secs = [lut, quant, self.t_init, other];
        let total: f64 = secs.iter().sum();
        self.phases = PHASE_NAMES
            .iter()
            .zip(secs)
            .map(|(name, seconds)| PhaseShare {
                name: name.to_string(),
                seconds,
                percent: if total > 0.0 {
                    100.0 * seconds / total
                } else {
                    0.0
                },
            })
            .collect();
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseShare> {
        self.phases.iter().find(|p| p.name == name)
    }

    /// How many times faster this run is than `baseline`, by total time.
    pub fn speedup_over(&self, baseline: &RunReport) -> f64 {
        baseline.total() / self.total()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AxError::Format {
            what: "report".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AxError::Format {
            what: "report".into(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_toml()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let text = String::from_utf8(bytes).map_err(|e| AxError::Format {
            what: "report".into(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// `section,name,kind,seconds,percent` rows.
    pub fn to_csv(&self) -> String {
        let esc = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("section,name,kind,seconds,percent\n");
        out += &format!("total,t_init,,{},\n", self.t_init);
        out += &format!("total,t_comp,,{},\n", self.t_comp);
        for p in &self.phases {
            out += &format!("phase,{},,{},{}\n", esc(&p.name), p.seconds, p.percent);
        }
        for l in &self.layers {
            out += &format!("layer,{},{},{},\n", esc(&l.name), esc(&l.kind), l.seconds);
        }
        out
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} [{} engine, lut {}] {} images in {} batches",
            if self.model.is_empty() {
                "model"
            } else {
                &self.model
            },
            self.engine,
            if self.lut.is_empty() { "-" } else { &self.lut },
            self.images,
            self.batches
        )?;
        writeln!(
            f,
            "time: {:.3} + {:.3} = {:.3} s (t_init + t_comp)",
            self.t_init,
            self.t_comp,
            self.total()
        )?;
        writeln!(f, "MACs: {}", self.mac_count)?;
        if let Some(a) = self.top1_agreement {
            writeln!(f, "top-1 agreement: {:.2}%", 100.0 * a)?;
        }
        for p in &self.phases {
            writeln!(
                f,
                "  {:<22} {:>10.4} s {:>6.1}%",
                p.name, p.seconds, p.percent
            )?;
        }
        Ok(())
    }
}
