//! Per-clip evaluation and its serializable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blink::{blinks_per_sec, BlinkDetector};
use super::identity::{acd, AcdResult};
use super::kid::kid;
use super::quality::{cpbd, psnr, ssim};
use super::wer::wer;
use crate::error::{bail_shape, Error, Result};
use crate::landmarks::LandmarkProvider;
use crate::media::TalkingClip;
use crate::providers::{EmbeddingProvider, LipReader};

/// Report order; also the row order of [`MetricReport::table`].
pub const METRIC_ORDER: [&str; 8] = [
    "psnr",
    "ssim",
    "cpbd",
    "kid_x100",
    "acd_cosine",
    "acd_euclidean",
    "blinks_per_sec",
    "wer",
];

/// Seed of the KID subset resampling.
pub const KID_SEED: u64 = 0;

/// Serializes non-finite values as the strings `"inf"`, `"-inf"` and
/// `"nan"` so JSON stays valid and round-trips exactly.
mod maybe_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => Repr::Num(*x).serialize(s),
            Some(x) if x.is_nan() => Repr::Text("nan".into()).serialize(s),
            Some(x) => Repr::Text(if *x > 0.0 { "inf" } else { "-inf" }.into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" => Ok(Some(f64::INFINITY)),
                "-inf" => Ok(Some(f64::NEG_INFINITY)),
                "nan" => Ok(Some(f64::NAN)),
                other => Err(serde::de::Error::custom(format!(
                    "bad metric value `{other}`"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    #[serde(with = "maybe_inf")]
    pub value: Option<f64>,
    #[serde(with = "maybe_inf")]
    pub std: Option<f64>,
    /// Why the metric could not be computed.
    pub skipped: Option<String>,
    pub provider: Option<String>,
    /// Threshold verdict, for metrics that have one.
    pub pass: Option<bool>,
}

impl MetricEntry {
    fn value(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            std: None,
            skipped: None,
            provider: None,
            pass: None,
        }
    }

    fn skipped(name: &str, reason: impl Into<String>) -> Self {
        Self {
            skipped: Some(reason.into()),
            value: None,
            ..Self::value(name, 0.0)
        }
    }

    fn by(mut self, provider: &str) -> Self {
        self.provider = Some(provider.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<MetricEntry>,
    pub inputs: BTreeMap<String, String>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("report parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Fixed-order text table: metrics in [`METRIC_ORDER`] first, any others
    /// after in report order.
    pub fn table(&self) -> String {
        let mut rows: Vec<&MetricEntry> = METRIC_ORDER.iter().filter_map(|n| self.get(n)).collect();
        rows.extend(
            self.metrics
                .iter()
                .filter(|m| !METRIC_ORDER.contains(&m.name.as_str())),
        );
        let mut out = format!(
            "{:<16} {:>12} {:>10}  {}\n",
            "metric", "value", "std", "notes"
        );
        for m in rows {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let mut notes = Vec::new();
            if let Some(p) = &m.provider {
                notes.push(format!("provider={p}"));
            }
            if let Some(pass) = m.pass {
                notes.push(if pass { "pass" } else { "fail" }.into());
            }
            if let Some(r) = &m.skipped {
                notes.push(format!("skipped: {r}"));
            }
            let _ = writeln!(
                out,
                "{:<16} {:>12} {:>10}  {}",
                m.name,
                fmt(m.value),
                fmt(m.std),
                notes.join(", ")
            );
        }
        out
    }
}

/// Optional external models used by [`evaluate_clip`]; a missing one marks
/// its metrics as skipped.
#[derive(Default)]
pub struct EvalProviders<'a> {
    pub embedding: Option<&'a dyn EmbeddingProvider>,
    pub landmarks: Option<&'a dyn LandmarkProvider>,
    pub blink: Option<&'a dyn BlinkDetector>,
    pub lip_reader: Option<&'a dyn LipReader>,
}

/// Compare a generated clip against its reference. `transcript` is the
/// reference word sequence for WER.
pub fn evaluate_clip(
    generated: &TalkingClip,
    reference: &TalkingClip,
    providers: &EvalProviders,
    transcript: Option<&[String]>,
) -> Result<MetricReport> {
    if generated.len() != reference.len() {
        bail_shape!(
            "generated clip has {} frames, reference {}",
            generated.len(),
            reference.len()
        );
    }
    if generated.frame_dims() != reference.frame_dims() {
        bail_shape!(
            "frame size {:?} differs from reference {:?}",
            generated.frame_dims(),
            reference.frame_dims()
        );
    }
    let (gen, refs) = (generated.frames(), reference.frames());
    let n = gen.len() as f64;
    let mut metrics = Vec::new();

    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (g, r) in gen.iter().zip(refs) {
        psnr_sum += psnr(g, r)?;
        ssim_sum += ssim(g, r)?;
    }
    metrics.push(MetricEntry::value("psnr", psnr_sum / n));
    metrics.push(MetricEntry::value("ssim", ssim_sum / n));
    let cpbd_sum: f64 = gen.iter().map(cpbd).sum();
    metrics.push(MetricEntry::value("cpbd", cpbd_sum / n));

    match providers.embedding {
        Some(p) => {
            let embed = |frames: &[crate::media::Image]| {
                frames
                    .iter()
                    .map(|f| p.embed(f))
                    .collect::<Result<Vec<_>>>()
            };
            if gen.len() < 2 {
                metrics
                    .push(MetricEntry::skipped("kid_x100", "needs at least 2 frames").by(p.name()));
            } else {
                let est = kid(&embed(refs)?, &embed(gen)?, KID_SEED)?;
                let mut e = MetricEntry::value("kid_x100", est.value * 100.0).by(p.name());
                e.std = Some(est.std * 100.0);
                metrics.push(e);
            }
            let r: AcdResult = acd(gen, &refs[0], p)?;
            let mut c = MetricEntry::value("acd_cosine", r.cosine).by(p.name());
            c.pass = Some(r.cosine_pass());
            let mut e = MetricEntry::value("acd_euclidean", r.euclidean).by(p.name());
            e.pass = Some(r.euclidean_pass());
            metrics.extend([c, e]);
        }
        None => {
            for name in ["kid_x100", "acd_cosine", "acd_euclidean"] {
                metrics.push(MetricEntry::skipped(name, "no embedding provider"));
            }
        }
    }

    match (providers.landmarks, providers.blink) {
        (Some(lm), Some(det)) => {
            let ear = gen
                .iter()
                .enumerate()
                .map(|(i, f)| lm.landmarks(f, i)?.ear())
                .collect::<Result<Vec<_>>>()?;
            let rate = blinks_per_sec(&ear, generated.fps(), det)?;
            metrics.push(MetricEntry::value("blinks_per_sec", rate).by(&format!(
                "{}+{}",
                lm.name(),
                det.name()
            )));
        }
        (None, _) => metrics.push(MetricEntry::skipped(
            "blinks_per_sec",
            "no landmark provider",
        )),
        (_, None) => metrics.push(MetricEntry::skipped("blinks_per_sec", "no blink detector")),
    }

    match (providers.lip_reader, transcript) {
        (Some(reader), Some(words)) => {
            let hyp = reader.read(gen)?;
            metrics.push(MetricEntry::value("wer", wer(words, &hyp)?).by(reader.name()));
        }
        (None, _) => metrics.push(MetricEntry::skipped("wer", "no lip-reader provider")),
        (_, None) => metrics.push(MetricEntry::skipped("wer", "no reference transcript")),
    }

    Ok(MetricReport {
        metrics,
        inputs: BTreeMap::new(),
        config_hash: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::EyeRegionLandmarkProvider;
    use crate::media::Image;
    use crate::metrics::blink::ThresholdBlinkDetector;
    use crate::providers::{EchoLipReader, ThumbnailEmbedding};

    fn clip(n: usize, shift: f64) -> TalkingClip {
        let frames = (0..n)
            .map(|i| {
                Image::from_fn(24, 24, |y, x| {
                    let edge = if x > 8 + i % 3 { 0.9 } else { 0.1 };
                    [edge, (y as f64 / 24.0 + shift).min(1.0), 0.4]
                })
            })
            .collect();
        TalkingClip::new(frames, 25.0, None).unwrap()
    }

    #[test]
    fn self_comparison() {
        let c = clip(4, 0.0);
        let emb = ThumbnailEmbedding::default();
        let lips = EchoLipReader::new("bin blue at e seven please");
        let providers = EvalProviders {
            embedding: Some(&emb),
            lip_reader: Some(&lips),
            ..Default::default()
        };
        let words = lips.transcript.clone();
        let r = evaluate_clip(&c, &c, &providers, Some(&words)).unwrap();
        assert_eq!(r.get("psnr").unwrap().value, Some(f64::INFINITY));
        assert!((r.get("ssim").unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.get("wer").unwrap().value, Some(0.0));
        assert!(r.get("acd_euclidean").unwrap().pass.is_some());
        assert!(r.get("blinks_per_sec").unwrap().skipped.is_some());
        assert_eq!(r.metrics.len(), METRIC_ORDER.len());
    }

    #[test]
    fn missing_providers_are_marked_skipped() {
        let c = clip(3, 0.0);
        let r = evaluate_clip(&c, &clip(3, 0.1), &EvalProviders::default(), None).unwrap();
        for name in [
            "kid_x100",
            "acd_cosine",
            "acd_euclidean",
            "blinks_per_sec",
            "wer",
        ] {
            let e = r.get(name).unwrap();
            assert!(e.skipped.is_some() && e.value.is_none(), "{name}");
        }
        assert!(r.get("psnr").unwrap().value.unwrap().is_finite());
        assert!(r.table().contains("skipped: no lip-reader provider"));
    }

    #[test]
    fn mismatched_clips_are_rejected() {
        let none = EvalProviders::default();
        assert!(evaluate_clip(&clip(3, 0.0), &clip(4, 0.0), &none, None).is_err());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let c = clip(3, 0.0);
        let emb = ThumbnailEmbedding::default();
        let lm = EyeRegionLandmarkProvider::default();
        let det = ThresholdBlinkDetector::default();
        let providers = EvalProviders {
            embedding: Some(&emb),
            landmarks: Some(&lm),
            blink: Some(&det),
            lip_reader: None,
        };
        let mut r = evaluate_clip(&c, &c, &providers, None).unwrap();
        r.inputs.insert("generated".into(), "out/clip".into());
        r.config_hash = "abc".into();
        let json = r.to_json().unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(MetricReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn table_rows_follow_the_fixed_order() {
        let r = evaluate_clip(
            &clip(3, 0.0),
            &clip(3, 0.2),
            &EvalProviders::default(),
            None,
        )
        .unwrap();
        let t = r.table();
        let pos: Vec<usize> = METRIC_ORDER
            .iter()
            .map(|n| t.find(&format!("\n{n} ")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
