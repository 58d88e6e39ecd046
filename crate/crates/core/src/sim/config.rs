use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::channel::{ChannelProfile, MaterialKind};
use crate::positioning::{ceiling_corner_anchors, Anchor, RoomBounds};
use crate::pulse::DesignConfig;
use crate::ranging::{ToaMethod, TrainingPattern};
use crate::SPEED_OF_LIGHT;

/// How anchors share the air.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMode {
    /// All anchors transmit in the same slot with their own orthogonal pulse;
    /// each link is received in isolation.
    #[default]
    Shared,
    /// Anchors transmit one after another in disjoint slots of one record,
    /// so multipath tails can leak into the next anchor's slot.
    Serialized,
}

/// Where the target is drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniform on the floor, `z = 0`.
    #[default]
    Floor,
    /// Uniform in the room volume.
    Volume,
}

/// Clearance from the walls when drawing the target.
pub const PLACEMENT_INSET_M: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub room: RoomBounds,
    pub anchors: Vec<Anchor>,
    /// Pulse-set JSON; when absent the pulses are designed from `design`.
    pub pulse_set: Option<PathBuf>,
    pub design: DesignConfig,
    pub channel: ChannelProfile,
    /// Medium between every anchor and the target.
    pub medium: MaterialKind,
    pub symbol_duration_s: f64,
    pub symbol_count: usize,
    pub pattern: TrainingPattern,
    pub toa_method: ToaMethod,
    pub slot_mode: SlotMode,
    pub placement: Placement,
    /// Ranging is synchronized, so the solved clock bias should be near
    /// zero. A fix whose |bias| exceeds this many metres, or a failed
    /// general solve, is replaced by the zero-bias closed form if that fits
    /// the ranges to within the same tolerance. `null` disables the check.
    pub bias_gate_m: Option<f64>,
    #[serde(with = "snr_list")]
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let room = RoomBounds::default();
        Self {
            anchors: ceiling_corner_anchors(&room),
            room,
            pulse_set: None,
            design: DesignConfig::default(),
            channel: ChannelProfile::default(),
            medium: MaterialKind::FreeSpace,
            symbol_duration_s: 50e-9,
            symbol_count: 20,
            pattern: TrainingPattern::default(),
            toa_method: ToaMethod::default(),
            slot_mode: SlotMode::default(),
            placement: Placement::default(),
            bias_gate_m: Some(0.01),
            snr_db: vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            trials: 100,
            seed: 1,
            output_dir: PathBuf::from("out"),
            parallel: true,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        self.room.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.channel.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.anchors.len() < 4 {
            return bad(format!("need at least 4 anchors, got {}", self.anchors.len()));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_db.is_empty() {
            return bad("snr grid is empty".into());
        }
        if let Some(s) = self.snr_db.iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
            return bad(format!("invalid snr {s}"));
        }
        if let Some(g) = self.bias_gate_m {
            if !(g.is_finite() && g > 0.0) {
                return bad(format!("bias_gate_m must be positive, got {g}"));
            }
        }
        if self.symbol_count < 2 {
            return bad(format!("symbol_count must be at least 2, got {}", self.symbol_count));
        }
        if self.snr_db.len() > u32::MAX as usize || self.trials > u32::MAX as usize {
            return bad("sweep too large".into());
        }
        if !(self.symbol_duration_s.is_finite() && self.symbol_duration_s > 0.0) {
            return bad(format!("symbol duration must be positive, got {}", self.symbol_duration_s));
        }
        let worst = self
            .anchors
            .iter()
            .flat_map(|a| corners(&self.room).map(move |c| a.distance_to(&c)))
            .fold(0.0, f64::max);
        if worst / SPEED_OF_LIGHT >= self.symbol_duration_s {
            return bad(format!(
                "flight time up to {:.3e} s does not fit in one symbol of {:.3e} s",
                worst / SPEED_OF_LIGHT,
                self.symbol_duration_s
            ));
        }
        Ok(())
    }
}

fn corners(room: &RoomBounds) -> impl Iterator<Item = [f64; 3]> + '_ {
    (0..8).map(move |i| {
        let pick = |k: usize| if i >> k & 1 == 0 { room.min[k] } else { room.max[k] };
        [pick(0), pick(1), pick(2)]
    })
}

/// Parses an SNR value in dB; `inf` means no noise.
pub fn parse_snr(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let v = match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        _ => t.parse::<f64>().map_err(|_| format!("invalid SNR {s:?}"))?,
    };
    if v.is_nan() || v == f64::NEG_INFINITY {
        return Err(format!("invalid SNR {s:?}"));
    }
    Ok(v)
}

/// SNR lists in JSON: numbers, or the string `"inf"` for the no-noise
/// sentinel.
pub(crate) mod snr_list {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Entry {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = v
            .iter()
            .map(|&x| if x.is_finite() { Entry::Number(x) } else { Entry::Text("inf".into()) })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Entry>::deserialize(d)?
            .into_iter()
            .map(|e| match e {
                Entry::Number(x) => Ok(x),
                Entry::Text(t) => super::parse_snr(&t).map_err(D::Error::custom),
            })
            .collect()
    }
}

/// A single SNR value with the same JSON convention as [`snr_list`].
pub(crate) mod snr_value {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::snr_list::Entry;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Entry::deserialize(d)? {
            Entry::Number(x) => Ok(x),
            Entry::Text(t) => super::parse_snr(&t).map_err(D::Error::custom),
        }
    }
}
