//! Writers for the JSON reports and their plain-text summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::hjb::SolutionPropertyReport;
use crate::hypotheses::{HypothesisReport, Outcome, PmpClass};

/// Pretty JSON with a trailing newline. Parent directories are created.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn hypothesis_summary(r: &HypothesisReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Hypothesis {} on {}: {:?}{}",
        r.hypothesis,
        r.problem,
        r.verdict,
        if r.vacuous { " (vacuous premise)" } else { "" }
    );
    let _ = writeln!(s, "seed {}, {} initial data", r.seed, r.initial_data.len());
    let _ = writeln!(s);
    for e in &r.evidence {
        let mark = match e.outcome {
            Outcome::Holds => "holds",
            Outcome::Fails => "fails",
            Outcome::Recorded => "noted",
        };
        let _ = writeln!(
            s,
            "[{mark}]{} {}\n        {} | {}",
            if e.contradicts { " !" } else { "" },
            e.claim,
            e.checker,
            e.detail
        );
        for a in &e.artifacts {
            let _ = writeln!(s, "        artifact: {a}");
        }
    }
    if !r.census.is_empty() {
        let count = |c: PmpClass| r.census.iter().filter(|e| e.class == c).count();
        let _ = writeln!(
            s,
            "\ncensus: {} unique, {} multiple, {} none found, {} unresolved",
            count(PmpClass::Unique),
            count(PmpClass::Multiple),
            count(PmpClass::NoneFound),
            count(PmpClass::Unresolved)
        );
    }
    let _ = writeln!(s, "\n{}", r.narrative);
    s
}

/// Writes `<stem>.json` and `<stem>.txt` into `dir`.
pub fn write_hypothesis_report(r: &HypothesisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let stem = format!("hypothesis{}_{}", r.hypothesis, r.problem);
    let json = dir.join(format!("{stem}.json"));
    let txt = dir.join(format!("{stem}.txt"));
    write_json(r, &json)?;
    write_text(&hypothesis_summary(r), &txt)?;
    Ok(vec![json, txt])
}

pub fn property_summary(r: &SolutionPropertyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:?}: {} of {} points pass (tolerance {})",
        r.property,
        r.passes,
        r.points_checked.len(),
        r.tolerance
    );
    if let Some(t) = &r.terminal {
        let _ = writeln!(s, "terminal condition: {}", if t.ok { "ok" } else { "violated" });
    }
    for f in &r.failures {
        let _ = writeln!(s, "  fails at {:?}: {}", f.point, f.detail);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::{EvidenceRow, Verdict};

    fn sample() -> HypothesisReport {
        HypothesisReport {
            hypothesis: 2,
            problem: "ex31".into(),
            seed: 0,
            initial_data: vec![(vec![0.0], 0.0)],
            evidence: vec![EvidenceRow {
                claim: "c".into(),
                checker: "pmp::shoot_pmp".into(),
                outcome: Outcome::Fails,
                contradicts: true,
                detail: "d".into(),
                artifacts: vec!["a.csv".into()],
            }],
            census: Vec::new(),
            verdict: Verdict::Refutes,
            vacuous: false,
            narrative: "n".into(),
        }
    }

    #[test]
    fn summary_lists_rows_and_verdict() {
        let s = hypothesis_summary(&sample());
        assert!(s.starts_with("Hypothesis 2 on ex31: Refutes"));
        assert!(s.contains("[fails] ! c"));
        assert!(s.contains("artifact: a.csv"));
    }

    #[test]
    fn writes_both_files_and_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_hypothesis_report(&sample(), dir.path()).unwrap();
        let first = fs::read(&paths[0]).unwrap();
        write_hypothesis_report(&sample(), dir.path()).unwrap();
        assert_eq!(fs::read(&paths[0]).unwrap(), first);
        let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
        assert_eq!(v["verdict"], "refutes");
        assert!(paths[1].ends_with("hypothesis2_ex31.txt"));
    }
}
