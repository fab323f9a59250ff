//! Manifest evaluation (ERLE, near-end SNR, RTF) and the component ablation.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::config::AppConfig;
use crate::datagen::Scenario;
use crate::error::{Error, Result};
use crate::pipeline::{erle, measure_rtf, Pipeline, RtfMeasurement};
use crate::signal::{Waveform, FULLBAND_RATE};
use crate::stfgcrn::Stfgcrn;
use crate::train::{train, Clip, Example, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipMetrics {
    pub id: String,
    pub scenario: Option<Scenario>,
    /// Echo reduction over far-end-active frames (far-end single talk only).
    pub erle_db: Option<f64>,
    pub erle_linear_db: Option<f64>,
    /// `10·log10(Σs² / Σ(out − s)²)` for clips with near-end speech.
    pub near_snr_db: Option<f64>,
    pub near_snr_linear_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub scenario: Option<Scenario>,
    pub clips: usize,
    pub erle_db: Option<f64>,
    pub erle_linear_db: Option<f64>,
    pub near_snr_db: Option<f64>,
    pub near_snr_linear_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Mean ERLE over far-end single-talk clips.
    pub erle_db: Option<f64>,
    pub erle_linear_db: Option<f64>,
    pub rtf: Option<RtfMeasurement>,
    /// Streaming latency in full-band samples.
    pub latency: usize,
    pub scenarios: Vec<ScenarioMetrics>,
    pub clips: Vec<ClipMetrics>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn snr(reference: &[f64], estimate: &[f64]) -> f64 {
    let ps: f64 = reference.iter().map(|v| v * v).sum();
    let pe: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (ps / pe.max(1e-20)).log10()
}

/// Runs the pipeline over every clip. Far-end single-talk clips are scored
/// by ERLE over frames with far-end activity; clips with near-end speech by
/// near-end SNR. Each clip's linear-stage output is scored alongside.
pub fn evaluate_clips(pipeline: &Pipeline, clips: &[Clip]) -> Result<Vec<ClipMetrics>> {
    clips
        .iter()
        .map(|c| {
            let mic = Waveform::new(c.mic.clone(), FULLBAND_RATE)?;
            let far = Waveform::new(c.far.clone(), FULLBAND_RATE)?;
            let run = pipeline.process(&mic, &far)?;
            let out = run.output.samples();
            let lin = run.linear.error.samples();
            let fst = c.scenario == Some(Scenario::FarSingleTalk);
            let has_near = c.near_labels.iter().any(|&b| b);
            Ok(ClipMetrics {
                id: c.id.clone(),
                scenario: c.scenario,
                erle_db: fst.then(|| erle(&c.mic, out, Some(&c.far_labels))),
                erle_linear_db: fst.then(|| erle(&c.mic, lin, Some(&c.far_labels))),
                near_snr_db: has_near.then(|| snr(&c.near, out)),
                near_snr_linear_db: has_near.then(|| snr(&c.near, lin)),
            })
        })
        .collect()
}

impl MetricsReport {
    pub fn new(clips: Vec<ClipMetrics>, rtf: Option<RtfMeasurement>, latency: usize) -> Self {
        let mut kinds: Vec<Option<Scenario>> = Vec::new();
        for c in &clips {
            if !kinds.contains(&c.scenario) {
                kinds.push(c.scenario);
            }
        }
        kinds.sort_by_key(|k| k.map(|s| Scenario::ALL.iter().position(|&x| x == s)));
        let scenarios = kinds
            .into_iter()
            .map(|k| {
                let sel: Vec<&ClipMetrics> = clips.iter().filter(|c| c.scenario == k).collect();
                ScenarioMetrics {
                    scenario: k,
                    clips: sel.len(),
                    erle_db: mean(sel.iter().map(|c| c.erle_db)),
                    erle_linear_db: mean(sel.iter().map(|c| c.erle_linear_db)),
                    near_snr_db: mean(sel.iter().map(|c| c.near_snr_db)),
                    near_snr_linear_db: mean(sel.iter().map(|c| c.near_snr_linear_db)),
                }
            })
            .collect();
        Self {
            erle_db: mean(clips.iter().map(|c| c.erle_db)),
            erle_linear_db: mean(clips.iter().map(|c| c.erle_linear_db)),
            rtf,
            latency,
            scenarios,
            clips,
        }
    }

    pub fn table(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>5} {:>9} {:>9} {:>9} {:>9}",
            "scenario", "clips", "erle", "erle_lin", "snr", "snr_lin"
        );
        for m in &self.scenarios {
            let _ = writeln!(
                s,
                "{:<18} {:>5} {:>9} {:>9} {:>9} {:>9}",
                m.scenario.map_or("unlabelled", |x| x.name()),
                m.clips,
                f(m.erle_db),
                f(m.erle_linear_db),
                f(m.near_snr_db),
                f(m.near_snr_linear_db)
            );
        }
        let _ = writeln!(s, "erle {} dB (linear {} dB)", f(self.erle_db), f(self.erle_linear_db));
        match &self.rtf {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "rtf {:.4} ({:.2} s for {:.2} s of audio), latency {} samples",
                    r.rtf, r.processing_secs, r.audio_secs, self.latency
                );
            }
            None => {
                let _ = writeln!(s, "rtf not measured, latency {} samples", self.latency);
            }
        }
        s
    }

    /// One JSON object per clip, per scenario, and a final summary line.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "type", rename_all = "kebab-case")]
        enum Line<'a> {
            Clip(&'a ClipMetrics),
            Scenario(&'a ScenarioMetrics),
            Summary {
                erle_db: Option<f64>,
                erle_linear_db: Option<f64>,
                rtf: Option<RtfMeasurement>,
                latency: usize,
            },
        }
        let mut put = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut *w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        for c in &self.clips {
            put(&Line::Clip(c))?;
        }
        for s in &self.scenarios {
            put(&Line::Scenario(s))?;
        }
        put(&Line::Summary {
            erle_db: self.erle_db,
            erle_linear_db: self.erle_linear_db,
            rtf: self.rtf,
            latency: self.latency,
        })
    }
}

/// Evaluates `clips` and measures the streaming RTF over `rtf_seconds`.
pub fn evaluate(pipeline: &Pipeline, clips: &[Clip], rtf_seconds: Option<f64>) -> Result<MetricsReport> {
    let metrics = evaluate_clips(pipeline, clips)?;
    let rtf = rtf_seconds.map(|s| measure_rtf(pipeline, s, 0)).transpose()?;
    Ok(MetricsReport::new(metrics, rtf, pipeline.latency()?))
}

/// Cumulative component toggles, one per ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub vad: bool,
    pub tfcm: bool,
    pub echo_decoder: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant {
            name: "base",
            vad: false,
            tfcm: false,
            echo_decoder: false,
        },
        Variant {
            name: "+dsvad",
            vad: true,
            tfcm: false,
            echo_decoder: false,
        },
        Variant {
            name: "+tfcm",
            vad: true,
            tfcm: true,
            echo_decoder: false,
        },
        Variant {
            name: "+echo",
            vad: true,
            tfcm: true,
            echo_decoder: true,
        },
    ];

    /// Comma-separated names, e.g. `base,+dsvad,+tfcm,+echo`.
    pub fn parse_list(list: &str) -> Result<Vec<Variant>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                Self::ALL
                    .iter()
                    .find(|v| v.name == name)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("unknown variant {name:?} (expected base, +dsvad, +tfcm, +echo)")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub train_loss: f64,
    pub erle_db: Option<f64>,
    pub erle_linear_db: Option<f64>,
    pub near_snr_db: Option<f64>,
}

/// Trains each variant from the same seed on `clips` and evaluates it on
/// the same clips.
pub fn ablate(clips: &[Clip], variants: &[Variant], config: &AppConfig) -> Result<Vec<AblationRow>> {
    let examples: Vec<Example> = clips.iter().map(|c| c.example(&config.pipeline)).collect::<Result<_>>()?;
    variants
        .iter()
        .map(|v| {
            let net_cfg = crate::stfgcrn::NetworkConfig {
                use_vad: v.vad,
                use_tfcm: v.tfcm,
                use_echo_decoder: v.echo_decoder,
                ..config.network
            };
            let net = Stfgcrn::<f32>::new(net_cfg, config.network_seed)?;
            let params = net.param_count();
            let mut trainer = Trainer::new(net, &config.train, config.loss);
            let history = train(&mut trainer, &examples, &[], &config.train, &config.pipeline, None)?;
            let pipeline = Pipeline::with_network(config.pipeline.clone(), trainer.net)?;
            let m = MetricsReport::new(evaluate_clips(&pipeline, clips)?, None, 0);
            Ok(AblationRow {
                variant: v.name.to_string(),
                params,
                train_loss: history.last().map_or(f64::NAN, |h| h.train_loss),
                erle_db: m.erle_db,
                erle_linear_db: m.erle_linear_db,
                near_snr_db: mean(m.clips.iter().map(|c| c.near_snr_db)),
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>9} {:>10} {:>9} {:>9} {:>9}",
        "variant", "params", "loss", "erle", "erle_lin", "snr"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>9} {:>10.4} {:>9} {:>9} {:>9}",
            r.variant,
            r.params,
            r.train_loss,
            f(r.erle_db),
            f(r.erle_linear_db),
            f(r.near_snr_db)
        );
    }
    s
}
