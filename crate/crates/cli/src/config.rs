//! Resolved experiment configuration: subcommand defaults, overlaid by a
//! config file, overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rsamp::amp::TauMode;
use rsamp::state_evolution::{build_coupling, build_coupling_nonconforming};
use rsamp::{ChannelParams, CouplingKind, CouplingSpec, DiscretePrior, QuadratureSpec, ScalarChannel, ThresholdConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub run: RunSection,
    pub model: ModelSection,
    pub coupling: CouplingSection,
    pub amp: AmpSection,
    pub thresholds: ThresholdSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub quad_nodes: usize,
    pub qmc_samples: usize,
    pub qmc_shifts: usize,
    /// Output directory; not part of the embedded config.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Worker threads; not part of the embedded config.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Builtin name (`binary`, `sparse:<rho>`, ...) or path to a JSON prior.
    pub prior: String,
    pub alpha: f64,
    pub delta: f64,
    /// `start:stop:count`, overriding `delta` where a sweep is accepted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_range: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<String>,
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    #[serde(rename = "Gamma")]
    pub gamma: usize,
    pub w: usize,
    pub kind: CouplingKind,
    /// Accept an even `Gamma`.
    pub nonconforming: bool,
    /// Grid of `saturation-sweep`.
    #[serde(rename = "Gammas")]
    pub gammas: Vec<usize>,
    pub ws: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpSection {
    #[serde(rename = "T")]
    pub t: usize,
    pub tau: TauMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_eps: Option<f64>,
    /// Run on a spatially coupled instance built from `[coupling]`.
    pub coupled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    pub grid_n: usize,
    pub delta_grid_n: usize,
    /// E-grid size of `potential-scan`.
    pub e_points: usize,
    /// Recovery slack of the coupled threshold, in units of `v`.
    pub coupled_slack: f64,
    pub scan_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_inst: usize,
    #[serde(rename = "Ls")]
    pub ls: Vec<usize>,
    pub h: f64,
    pub slack: f64,
}


impl Default for RunSection {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self { seed: 0, quad_nodes: q.gh_nodes, qmc_samples: q.qmc_samples, qmc_shifts: q.qmc_shifts, out: None, threads: None }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { prior: "binary".into(), alpha: 0.6, delta: 0.2, delta_range: None, alpha_range: None, l: 1000 }
    }
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self { gamma: 21, w: 1, kind: CouplingKind::Seeded, nonconforming: false, gammas: vec![21], ws: vec![1, 2] }
    }
}

impl Default for AmpSection {
    fn default() -> Self {
        Self { t: 200, tau: TauMode::StateEvolution, stop_eps: None, coupled: false }
    }
}

impl Default for ThresholdSection {
    fn default() -> Self {
        let t = ThresholdConfig::default();
        Self { tol: t.tol, cap: t.cap, grid_n: t.grid_n, delta_grid_n: t.delta_grid_n, e_points: 200, coupled_slack: 1e-3, scan_points: 12 }
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { n_inst: 1000, ls: vec![2, 4, 6, 8], h: 0.02, slack: 0.05 }
    }
}

impl Config {
    /// Defaults of one subcommand. Exact-enumeration checks run at small `L`.
    pub fn defaults_for(command: &str) -> Self {
        let mut c = Self::default();
        match command {
            "verify" => {
                c.model.l = 6;
                c.model.alpha = 0.5;
                c.verify.n_inst = 2000;
                c.model.delta = 0.5;
                c.coupling = CouplingSection { gamma: 3, kind: CouplingKind::Periodic, ..CouplingSection::default() };
            }
            "phase-diagram" => {
                c.model.prior = "sparse:0.1".into();
                c.model.alpha_range = Some("0.15:0.35:20".into());
            }
            _ => {}
        }
        c
    }

    /// Overlays the file at `path` onto `self`. The file is TOML with the
    /// sections of [`Config`], or an output previously written by this tool.
    pub fn overlay_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file = embedded_config(&text).with_context(|| format!("in config {}", path.display()))?;
        let mut base = toml::Table::try_from(&self)?;
        merge(&mut base, file);
        base.try_into().with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn prior(&self) -> Result<DiscretePrior> {
        let spec = &self.model.prior;
        let path = Path::new(spec);
        if spec.ends_with(".json") || path.is_file() {
            let text = std::fs::read_to_string(path).with_context(|| format!("model.prior: reading {spec}"))?;
            return DiscretePrior::from_json(&text).with_context(|| format!("model.prior: {spec}"));
        }
        DiscretePrior::builtin(spec).context("model.prior")
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            gh_nodes: self.run.quad_nodes,
            qmc_samples: self.run.qmc_samples,
            qmc_shifts: self.run.qmc_shifts,
            ..QuadratureSpec::default()
        }
    }

    pub fn channel(&self) -> Result<ScalarChannel> {
        ScalarChannel::new(self.prior()?, &self.quadrature()).context("run.quad_nodes")
    }

    pub fn params(&self, delta: f64) -> Result<ChannelParams> {
        let b = self.prior()?.b();
        ChannelParams::new(self.model.alpha, b, delta).context("model.alpha / model.delta")
    }

    pub fn deltas(&self) -> Result<Vec<f64>> {
        match &self.model.delta_range {
            Some(r) => parse_range(r).context("model.delta_range"),
            None => Ok(vec![self.model.delta]),
        }
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        match &self.model.alpha_range {
            Some(r) => parse_range(r).context("model.alpha_range"),
            None => Ok(vec![self.model.alpha]),
        }
    }

    pub fn threshold_config(&self) -> ThresholdConfig {
        let t = &self.thresholds;
        ThresholdConfig { tol: t.tol, cap: t.cap, grid_n: t.grid_n, delta_grid_n: t.delta_grid_n }
    }

    pub fn coupling_spec(&self, gamma: usize, w: usize) -> Result<CouplingSpec> {
        let c = &self.coupling;
        let spec = if c.nonconforming {
            build_coupling_nonconforming(gamma, w, c.kind)
        } else {
            build_coupling(gamma, w, c.kind)
        };
        spec.context("coupling")
    }
}

/// `start:stop:count`, inclusive and evenly spaced.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, count] = parts.as_slice() else {
        bail!("expected start:stop:count, got '{text}'");
    };
    let start: f64 = start.trim().parse().with_context(|| format!("bad start '{start}'"))?;
    let stop: f64 = stop.trim().parse().with_context(|| format!("bad stop '{stop}'"))?;
    let count: usize = count.trim().parse().with_context(|| format!("bad count '{count}'"))?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        bail!("range '{text}' must have finite ends and a positive count");
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect())
}

/// `Gamma,w,kind`.
pub fn parse_coupling(text: &str) -> Result<(usize, usize, CouplingKind)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [g, w, kind] = parts.as_slice() else {
        bail!("expected Gamma,w,kind, got '{text}'");
    };
    Ok((
        g.parse().with_context(|| format!("bad Gamma '{g}'"))?,
        w.parse().with_context(|| format!("bad w '{w}'"))?,
        kind.parse().map_err(|e: rsamp::Error| anyhow::anyhow!("{e}"))?,
    ))
}

pub fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',').map(|s| s.trim().parse().with_context(|| format!("bad list entry '{s}'"))).collect()
}

/// Config table from a TOML file, a CSV written by this tool (its `#` header)
/// or a JSON output (its `config` member). TOML errors carry line numbers.
fn embedded_config(text: &str) -> Result<toml::Table> {
    if text.trim_start().starts_with('{') {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let Some(cfg) = doc.get("config") else {
            bail!("JSON file has no 'config' member");
        };
        let table = toml::Table::try_from(cfg)?;
        check_fields(&table)?;
        return Ok(table);
    }
    let body = strip_embedding(text);
    // typed parse first, for field-level diagnostics with line numbers
    toml::from_str::<Config>(&body)?;
    Ok(toml::from_str(&body)?)
}

fn check_fields(table: &toml::Table) -> Result<()> {
    let _: Config = table.clone().try_into()?;
    Ok(())
}

/// The TOML embedded in a CSV header, or the text itself.
fn strip_embedding(text: &str) -> String {
    if !text.starts_with("# rsamp ") {
        return text.to_string();
    }
    text.lines()
        .skip(1)
        .map_while(|l| l.strip_prefix('#'))
        .map(|l| l.strip_prefix(' ').unwrap_or(l))
        .take_while(|l| !l.starts_with("content_hash"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_range("0.2:5:1").unwrap(), vec![0.2]);
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("0:1:0").is_err());
    }

    #[test]
    fn coupling_triples() {
        assert_eq!(parse_coupling("21, 2, seeded").unwrap(), (21, 2, CouplingKind::Seeded));
        assert!(parse_coupling("21,2").is_err());
        assert!(parse_coupling("21,2,ring").is_err());
    }

    #[test]
    fn toml_roundtrip_and_diagnostics() {
        let c = Config::defaults_for("verify");
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let err = toml::from_str::<Config>("[model]\nalpah = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("alpah") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn embedded_csv_header_is_loadable() {
        let c = Config::defaults_for("amp-run");
        let mut text = String::from("# rsamp amp-run\n");
        for l in c.to_toml().lines() {
            text.push_str(&format!("# {l}\n"));
        }
        text.push_str("# content_hash = \"x\"\nt,mse\n");
        let table = embedded_config(&text).unwrap();
        let back: Config = table.try_into().unwrap();
        assert_eq!(back, c);
    }
}
