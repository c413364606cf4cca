//! Run configuration: a strict JSON file merged under the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registered id or path to a problem JSON file.
    pub problem: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub refine: Option<usize>,
    pub flux: Option<Flux>,
    pub control_mesh: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub property: Option<PropertyArg>,
    pub expect: Option<ExpectProperty>,
    pub source: Option<Source>,
    /// Initial data per state dimension and per time.
    pub grid: Option<usize>,
    pub kink: Option<f64>,
    pub nx: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub xi_range: Option<String>,
    pub nt: Option<usize>,
    pub taus: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub hypothesis: Option<u8>,
    pub expect: Option<ExpectVerdict>,
    pub grid: Option<usize>,
    pub n_shoot: Option<usize>,
    pub nt: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Flux {
    ControlWise,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyArg {
    Viscosity,
    Extended,
    Semiconcavity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectProperty {
    Pass,
    Fail,
    /// Fails, and only on the kink hyperplane.
    FailAtKink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// The problem's closed-form value.
    Reference,
    /// A fresh HJB grid solution.
    Hjb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectVerdict {
    Supports,
    Refutes,
    Inconclusive,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// `lo:hi:n` with `n >= 1`.
pub fn parse_range(s: &str) -> Result<(f64, f64, usize), CliError> {
    let bad = || CliError::Usage(format!("range `{s}` is not of the form lo:hi:n"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

pub fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(CliError::Usage(format!("`{name}` must be positive")))
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("-1:1:21").unwrap(), (-1.0, 1.0, 21));
        assert_eq!(parse_range("0.01:3:50").unwrap(), (0.01, 3.0, 50));
        for bad in ["1:0:3", "0:1", "0:1:0", "a:1:2", "0:1:2:3"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ok: RunConfig =
            serde_json::from_str(r#"{"problem": "ex22", "solve": {"nx": 40, "flux": "local"}}"#)
                .unwrap();
        assert_eq!(ok.solve.nx, Some(40));
        assert!(serde_json::from_str::<RunConfig>(r#"{"problme": "ex22"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"solve": {"nz": 1}}"#).is_err());
    }
}
