//! JSON forms of models, noise and counterterm results.

use std::collections::BTreeMap;
use std::path::Path;

use flowpde_core::flow::{CounterTermResult, Provenance};
use flowpde_core::model::{preset, CoefKey, ModelSpec, Monomial, SpIndex, Symmetry, PRESETS};
use flowpde_core::noise::{Mollifier, NoiseKind, NoiseModel, Profile};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_json;

/// Mollifier profile written as `"bump"` or `"cos<p>"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProfileName(pub Profile);

impl TryFrom<String> for ProfileName {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "bump" {
            return Ok(ProfileName(Profile::Bump));
        }
        match s.strip_prefix("cos").and_then(|p| p.parse::<u32>().ok()) {
            Some(p) if p >= 1 => Ok(ProfileName(Profile::CosPower(p))),
            _ => Err(format!("unknown profile '{s}' (expected \"bump\" or \"cos<p>\")")),
        }
    }
}

impl From<ProfileName> for String {
    fn from(p: ProfileName) -> String {
        match p.0 {
            Profile::Bump => "bump".into(),
            Profile::CosPower(k) => format!("cos{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    MollifiedWhite {
        time: ProfileName,
        space: ProfileName,
        nu: f64,
        #[serde(default)]
        seed: u64,
    },
    PoissonShot {
        time: ProfileName,
        space: ProfileName,
        mark: ProfileName,
        intensity: f64,
        nu: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl NoiseConfig {
    pub fn to_model(&self) -> CliResult<NoiseModel> {
        let m = match self {
            NoiseConfig::MollifiedWhite { time, space, nu, seed } => NoiseModel::new(
                NoiseKind::MollifiedWhite(Mollifier { time: time.0, space: space.0 }),
                *nu,
                *seed,
            ),
            NoiseConfig::PoissonShot { time, space, mark, intensity, nu, seed } => NoiseModel::new(
                NoiseKind::PoissonShot {
                    mollifier: Mollifier { time: time.0, space: space.0 },
                    mark: mark.0,
                    intensity: *intensity,
                },
                *nu,
                *seed,
            ),
        };
        Ok(m?)
    }

    pub fn from_model(m: &NoiseModel) -> Self {
        match m.kind {
            NoiseKind::MollifiedWhite(mo) => NoiseConfig::MollifiedWhite {
                time: ProfileName(mo.time),
                space: ProfileName(mo.space),
                nu: m.nu,
                seed: m.seed,
            },
            NoiseKind::PoissonShot { mollifier, mark, intensity } => NoiseConfig::PoissonShot {
                time: ProfileName(mollifier.time),
                space: ProfileName(mollifier.space),
                mark: ProfileName(mark),
                intensity,
                nu: m.nu,
                seed: m.seed,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryName {
    #[default]
    None,
    Z2,
    Shift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    pub i: u32,
    pub m: u32,
    /// One spatial multi-index of length d per slot; empty means underived.
    #[serde(default)]
    pub a: Vec<Vec<u32>>,
    pub base: f64,
    #[serde(default)]
    pub extra_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub sigma: f64,
    pub dim_lambda: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    pub monomials: Vec<MonomialConfig>,
    #[serde(default)]
    pub symmetry: SymmetryName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    /// Renormalization values keyed by labels such as `f_1_1_0`.
    #[serde(default)]
    pub renorm: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

fn to_sp(d: usize, a: &[u32]) -> CliResult<SpIndex> {
    if a.len() > d || d > 4 {
        return Err(CliError::validation(format!("multi-index {a:?} longer than d = {d}")));
    }
    let mut out = [0u32; 4];
    out[..a.len()].copy_from_slice(a);
    Ok(out)
}

pub fn key_from_parts(d: usize, i: u32, m: u32, a: &[Vec<u32>]) -> CliResult<CoefKey> {
    if !a.is_empty() && a.len() != m as usize {
        return Err(CliError::validation(format!("({i},{m}): need one multi-index per slot, got {}", a.len())));
    }
    let sp = a.iter().map(|v| to_sp(d, v)).collect::<CliResult<Vec<_>>>()?;
    Ok(CoefKey::new(i, m, sp))
}

/// Per-slot multi-indices of length d, as written in JSON.
pub fn key_slots(d: usize, key: &CoefKey) -> Vec<Vec<u32>> {
    key.a.iter().map(|a| a[..d.max(1)].to_vec()).collect()
}

/// Inverse of `CoefKey::label`.
pub fn parse_label(label: &str) -> CliResult<CoefKey> {
    let bad = || CliError::validation(format!("bad coefficient label '{label}' (expected e.g. f_1_3_0)"));
    let parts: Vec<&str> = label.strip_prefix("f_").ok_or_else(bad)?.split('_').collect();
    if parts.len() < 3 {
        return Err(bad());
    }
    let i: u32 = parts[0].parse().map_err(|_| bad())?;
    let m: u32 = parts[1].parse().map_err(|_| bad())?;
    if parts[2..] == ["0"] {
        return Ok(CoefKey::plain(i, m));
    }
    let mut a = Vec::new();
    for p in &parts[2..] {
        if p.len() != 4 {
            return Err(bad());
        }
        let mut s = [0u32; 4];
        for (q, ch) in p.chars().enumerate() {
            s[q] = ch.to_digit(10).ok_or_else(bad)?;
        }
        a.push(s);
    }
    if a.len() != m as usize {
        return Err(bad());
    }
    Ok(CoefKey::new(i, m, a))
}

impl ModelConfig {
    pub fn to_spec(&self) -> CliResult<(ModelSpec, BTreeMap<CoefKey, f64>)> {
        let monomials = self
            .monomials
            .iter()
            .map(|mc| {
                Ok(Monomial {
                    key: key_from_parts(self.d, mc.i, mc.m, &mc.a)?,
                    base: mc.base,
                    extra_exponent: mc.extra_exponent,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let symmetry = match self.symmetry {
            SymmetryName::None => Symmetry::None,
            SymmetryName::Z2 => Symmetry::ParityZ2,
            SymmetryName::Shift => Symmetry::ShiftR,
        };
        let noise = self.noise.as_ref().map(|n| n.to_model()).transpose()?;
        let spec = ModelSpec {
            d: self.d,
            sigma: self.sigma,
            dim_lambda: self.dim_lambda,
            lambda: self.lambda,
            monomials,
            symmetry,
            noise,
        };
        spec.validate()?;
        let renorm = self
            .renorm
            .iter()
            .map(|(k, v)| Ok((parse_label(k)?, *v)))
            .collect::<CliResult<BTreeMap<_, _>>>()?;
        Ok((spec, renorm))
    }

    pub fn from_spec(spec: &ModelSpec, renorm: &BTreeMap<CoefKey, f64>) -> Self {
        ModelConfig {
            d: spec.d,
            sigma: spec.sigma,
            dim_lambda: spec.dim_lambda,
            lambda: spec.lambda,
            monomials: spec
                .monomials
                .iter()
                .map(|m| MonomialConfig {
                    i: m.key.i,
                    m: m.key.m,
                    a: if m.key.is_underived() { Vec::new() } else { key_slots(spec.d, &m.key) },
                    base: m.base,
                    extra_exponent: m.extra_exponent,
                })
                .collect(),
            symmetry: match spec.symmetry {
                Symmetry::None => SymmetryName::None,
                Symmetry::ParityZ2 => SymmetryName::Z2,
                Symmetry::ShiftR => SymmetryName::Shift,
            },
            noise: spec.noise.as_ref().map(NoiseConfig::from_model),
            renorm: renorm.iter().map(|(k, v)| (k.label(), *v)).collect(),
        }
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        Ok(ModelConfig::from_spec(&preset(name)?, &BTreeMap::new()))
    }

    /// Reads a model file, or falls back to a preset when `arg` names
    /// one (with or without a `.json` suffix) and no such file exists.
    pub fn load(arg: &str) -> CliResult<Self> {
        let path = Path::new(arg);
        if path.exists() {
            return read_json(path);
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
        if PRESETS.contains(&stem) {
            return ModelConfig::preset(stem);
        }
        Err(CliError::validation(format!(
            "model '{arg}' is neither a file nor a preset ({})",
            PRESETS.join(", ")
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterTermEntryJson {
    pub i: u32,
    pub m: u32,
    pub a: Vec<Vec<u32>>,
    pub value: f64,
    pub provenance: String,
    pub quad_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterTermJson {
    pub nu: f64,
    pub entries: Vec<CounterTermEntryJson>,
}

impl CounterTermJson {
    pub fn from_result(d: usize, r: &CounterTermResult) -> Self {
        CounterTermJson {
            nu: r.nu,
            entries: r
                .entries
                .iter()
                .map(|e| CounterTermEntryJson {
                    i: e.key.i,
                    m: e.key.m,
                    a: key_slots(d, &e.key),
                    value: e.value,
                    provenance: e.provenance.as_str().into(),
                    quad_err: e.quad_err,
                })
                .collect(),
        }
    }

    pub fn values(&self, d: usize) -> CliResult<BTreeMap<CoefKey, f64>> {
        self.entries
            .iter()
            .map(|e| {
                if e.provenance != Provenance::FlowIntegrated.as_str() && e.provenance != Provenance::Oracle.as_str() {
                    return Err(CliError::validation(format!("unknown provenance '{}'", e.provenance)));
                }
                Ok((key_from_parts(d, e.i, e.m, &e.a)?, e.value))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trip() {
        for name in PRESETS {
            let cfg = ModelConfig::preset(name).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ModelConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
            let (spec, _) = back.to_spec().unwrap();
            assert_eq!(spec, preset(name).unwrap());
        }
    }

    #[test]
    fn labels_parse_back() {
        for k in [CoefKey::plain(1, 3), CoefKey::new(1, 1, vec![[2, 0, 0, 0]]), CoefKey::new(2, 2, vec![[1, 0, 0, 0], [0, 1, 0, 0]])] {
            assert_eq!(parse_label(&k.label()).unwrap(), k);
        }
        assert!(parse_label("g_1_1_0").is_err());
        assert!(parse_label("f_1_2_1000").is_err());
    }

    #[test]
    fn parses_hand_written_model() {
        let text = r#"{"d":1,"sigma":0.5,"dim_lambda":0.3,"monomials":[{"i":1,"m":3,"base":-1.0}],
            "symmetry":"z2","noise":{"kind":"mollified_white","time":"cos4","space":"bump","nu":0.1},
            "renorm":{"f_1_1_0":0.25}}"#;
        let cfg: ModelConfig = serde_json::from_str(text).unwrap();
        let (spec, renorm) = cfg.to_spec().unwrap();
        assert_eq!(spec.symmetry, Symmetry::ParityZ2);
        assert_eq!(renorm[&CoefKey::plain(1, 1)], 0.25);
        assert!(matches!(spec.noise.unwrap().kind, NoiseKind::MollifiedWhite(m) if m.space == Profile::Bump));
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d":1,"sigma":0.5,"dim_lambda":0.3,"monomials":[],"bogus":1}"#).is_err());
    }
}
