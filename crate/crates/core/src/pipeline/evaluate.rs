//! Evaluation of generated clip directories against reference directories.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkProvider, SidecarLandmarkProvider, LANDMARK_FILE};
use crate::media::{list_frame_files, load_video, read_manifest};
use crate::metrics::{evaluate_clip, EvalProviders, MetricEntry, MetricReport};
use crate::providers::EchoLipReader;

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Per-metric mean over clips; the clip's own report for one clip.
    pub summary: MetricReport,
    pub clips: Vec<(String, MetricReport)>,
}

/// A directory holding frames is one clip; otherwise every subdirectory is.
fn clip_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    if !list_frame_files(dir)?.is_empty() {
        return Ok(vec![(name_of(dir), dir.to_path_buf())]);
    }
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .map(|p| (name_of(&p), p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no clips found",
            dir.display()
        )));
    }
    Ok(out)
}

fn pair_clips(generated: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let (g, r) = (clip_dirs(generated)?, clip_dirs(reference)?);
    if g.len() == 1 && r.len() == 1 && list_frame_files(generated)?.len() > 0 {
        let (name, gp) = g.into_iter().next().expect("one clip");
        return Ok(vec![(name, gp, r.into_iter().next().expect("one clip").1)]);
    }
    let gn: BTreeSet<&String> = g.iter().map(|(n, _)| n).collect();
    let rn: BTreeSet<&String> = r.iter().map(|(n, _)| n).collect();
    if gn != rn {
        let missing: Vec<_> = rn.difference(&gn).collect();
        let extra: Vec<_> = gn.difference(&rn).collect();
        return Err(Error::Validation(format!(
            "clip sets differ: missing from generated {missing:?}, not in reference {extra:?}"
        )));
    }
    Ok(g.into_iter()
        .zip(r)
        .map(|((n, gp), (_, rp))| (n, gp, rp))
        .collect())
}

fn transcript(dir: &Path) -> Result<Option<Vec<String>>> {
    Ok(read_manifest(dir)?
        .and_then(|m| m.extra.get("transcript").cloned())
        .map(|t| t.split_whitespace().map(String::from).collect()))
}

fn evaluate_pair(gen_dir: &Path, ref_dir: &Path, cfg: &PipelineConfig) -> Result<MetricReport> {
    let (generated, reference) = (load_video(gen_dir)?, load_video(ref_dir)?);
    let embedding = cfg.embedding_provider()?;
    let computed = cfg.landmark_provider();
    let sidecar = match cfg.providers.landmark.as_str() {
        "sidecar" if gen_dir.join(LANDMARK_FILE).exists() => {
            Some(SidecarLandmarkProvider::load(&gen_dir.join(LANDMARK_FILE))?)
        }
        _ => None,
    };
    let landmarks: Option<&dyn LandmarkProvider> = match (&computed, &sidecar) {
        (Some(c), _) => Some(c.as_ref()),
        (None, Some(s)) => Some(s),
        _ => None,
    };
    let blink = cfg.blink_detector();
    let reader = match (cfg.providers.lip_reader.as_str(), transcript(gen_dir)?) {
        ("echo", Some(words)) => Some(EchoLipReader { transcript: words }),
        _ => None,
    };
    let providers = EvalProviders {
        embedding: embedding.as_deref(),
        landmarks,
        blink: blink.as_deref(),
        lip_reader: reader.as_ref().map(|r| r as _),
    };
    let words = transcript(ref_dir)?;
    let mut report = evaluate_clip(&generated, &reference, &providers, words.as_deref())?;
    report
        .inputs
        .insert("generated".into(), gen_dir.display().to_string());
    report
        .inputs
        .insert("reference".into(), ref_dir.display().to_string());
    report.config_hash = cfg.hash();
    Ok(report)
}

fn mean_entry(entries: &[&MetricEntry]) -> MetricEntry {
    let first = entries[0].clone();
    if let Some(skipped) = entries.iter().find(|e| e.skipped.is_some()) {
        return MetricEntry {
            value: None,
            std: None,
            pass: None,
            ..(*skipped).clone()
        };
    }
    let n = entries.len() as f64;
    let mean = |f: fn(&MetricEntry) -> Option<f64>| -> Option<f64> {
        entries
            .iter()
            .map(|e| f(e))
            .sum::<Option<f64>>()
            .map(|s| s / n)
    };
    MetricEntry {
        value: mean(|e| e.value),
        std: mean(|e| e.std),
        pass: entries
            .iter()
            .map(|e| e.pass)
            .collect::<Option<Vec<bool>>>()
            .map(|v| v.iter().all(|&p| p)),
        ..first
    }
}

/// Evaluate matched clips. `generated` and `reference` are either single
/// clip directories or directories of identically named clips.
pub fn evaluate_dirs(
    generated: &Path,
    reference: &Path,
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let pairs = pair_clips(generated, reference)?;
    let clips: Vec<(String, MetricReport)> = pairs
        .iter()
        .map(|(n, g, r)| Ok((n.clone(), evaluate_pair(g, r, cfg)?)))
        .collect::<Result<_>>()?;
    let summary = if clips.len() == 1 {
        clips[0].1.clone()
    } else {
        let first = &clips[0].1;
        let metrics = first
            .metrics
            .iter()
            .map(|m| {
                let all: Vec<&MetricEntry> =
                    clips.iter().filter_map(|(_, r)| r.get(&m.name)).collect();
                mean_entry(&all)
            })
            .collect();
        let mut inputs = std::collections::BTreeMap::new();
        inputs.insert("generated".into(), generated.display().to_string());
        inputs.insert("reference".into(), reference.display().to_string());
        inputs.insert(
            "clips".into(),
            clips
                .iter()
                .map(|(n, _)| n.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        );
        MetricReport {
            metrics,
            inputs,
            config_hash: cfg.hash(),
        }
    };
    Ok(Evaluation { summary, clips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{toy_clip, write_toy_clip, ToyDomain};

    fn dataset(root: &Path, names: &[&str]) {
        for (i, n) in names.iter().enumerate() {
            let toy = toy_clip(ToyDomain::Human, i as u64, 6, 24).unwrap();
            write_toy_clip(&toy, &root.join(n), Some("bin blue at f two now")).unwrap();
        }
    }

    #[test]
    fn self_evaluation() {
        let d = tempfile::tempdir().unwrap();
        dataset(d.path(), &["a", "b"]);
        let cfg = PipelineConfig::toy(32);
        let ev = evaluate_dirs(d.path(), d.path(), &cfg).unwrap();
        assert_eq!(ev.clips.len(), 2);
        let s = &ev.summary;
        assert_eq!(s.get("psnr").unwrap().value, Some(f64::INFINITY));
        assert!((s.get("ssim").unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.get("wer").unwrap().value, Some(0.0));
        assert!(s.get("blinks_per_sec").unwrap().value.is_some());
        let again = evaluate_dirs(d.path(), d.path(), &cfg).unwrap();
        assert_eq!(again.summary.to_json().unwrap(), s.to_json().unwrap());
    }

    #[test]
    fn missing_providers_give_skipped_rows() {
        let d = tempfile::tempdir().unwrap();
        dataset(d.path(), &["a"]);
        let mut cfg = PipelineConfig::toy(32);
        cfg.providers.embedding = "none".into();
        cfg.providers.lip_reader = "none".into();
        let ev = evaluate_dirs(&d.path().join("a"), &d.path().join("a"), &cfg).unwrap();
        for name in ["kid_x100", "acd_cosine", "wer"] {
            assert!(ev.summary.get(name).unwrap().skipped.is_some(), "{name}");
        }
    }

    #[test]
    fn mismatched_clip_sets_are_listed() {
        let (g, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        dataset(g.path(), &["a", "b"]);
        dataset(r.path(), &["a", "c"]);
        let err = evaluate_dirs(g.path(), r.path(), &PipelineConfig::toy(32)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"c\"") && msg.contains("\"b\""), "{msg}");
    }
}
