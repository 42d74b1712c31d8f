//! Batch pipelines driven by a [`RunConfig`]: training with a loss curve,
//! decoding a split, and attention matrices for plotting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, DEV_FIRST_ID};
use crate::error::{Error, Result};
use crate::metrics::{edit_distance, gen_task};
use crate::model::{thread_pool, DecodeOptions, Example, Model, Trainer};
use crate::numerics::Mat64;

/// One optimizer step of the loss curve; `dev_ce` is present where it was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub epoch: u64,
    pub train_ce: f64,
    pub dev_ce: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub train_ce: f64,
    pub dev_ce: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<CurvePoint>,
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Contract(format!("csv: {e}"))
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(p).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn dev_loss(model: &Model, dev: &[Example]) -> Result<f64> {
    let ce = model.mean_loss(dev)?;
    if ce.is_finite() {
        Ok(ce)
    } else {
        Err(Error::NonFinite("dev cross-entropy".into()))
    }
}

/// Trains from scratch. Dev loss is evaluated every `eval_every` steps and
/// after the last step of each epoch.
pub fn train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = cfg.train_set()?;
    let dev_set = cfg.dev_set()?;
    let mut model = Model::new(cfg.model, cfg.attention, cfg.seed)?;
    let mut trainer = Trainer::new(cfg.optimizer, &model, cfg.seed)?;
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs {
        let start = curve.len();
        let losses = trainer.train_epoch_with(&mut model, &train_set, |m, rec| {
            let dev_ce = match cfg.eval_every {
                Some(k) if rec.iteration % k == 0 => Some(dev_loss(m, &dev_set)?),
                _ => None,
            };
            curve.push(CurvePoint {
                iteration: rec.iteration,
                epoch: rec.epoch,
                train_ce: rec.train_ce,
                dev_ce,
            });
            Ok(())
        })?;
        let last = curve.last_mut().expect("an epoch has at least one step");
        let dev_ce = match last.dev_ce {
            Some(d) => d,
            None => {
                let d = dev_loss(&model, &dev_set)?;
                last.dev_ce = Some(d);
                d
            }
        };
        let epoch_points = &curve[start..];
        on_epoch(&EpochSummary {
            epoch: losses[0].epoch,
            train_ce: epoch_points.iter().map(|p| p.train_ce).sum::<f64>() / epoch_points.len() as f64,
            dev_ce,
        });
    }
    Ok(TrainOutcome { model, curve })
}

/// Fails with a config error unless the checkpoint matches the configured model.
pub fn check_model_matches(cfg: &RunConfig, model: &Model) -> Result<()> {
    if *model.dims() != cfg.model || model.kind() != cfg.attention {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model with {:?}, config asks for {} with {:?}",
            model.kind(),
            model.dims(),
            cfg.attention,
            cfg.model
        )));
    }
    Ok(())
}

/// Utterance `id` of the train or dev split.
pub fn utterance(cfg: &RunConfig, id: usize) -> Result<Example> {
    let in_train = id < cfg.train_size;
    let in_dev = (DEV_FIRST_ID..DEV_FIRST_ID + cfg.dev_size).contains(&id);
    if !(in_train || in_dev) {
        return Err(Error::Config(format!(
            "utterance {id} is in neither split (train 0..{}, dev {DEV_FIRST_ID}..{})",
            cfg.train_size,
            DEV_FIRST_ID + cfg.dev_size
        )));
    }
    gen_task(&cfg.task, id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: usize,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub errors: usize,
    pub truncated: bool,
    pub log_prob: f64,
    /// Frames read per step, for decoders that decide an endpoint.
    pub endpoints: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeReport {
    pub records: Vec<DecodeRecord>,
    pub wer: f64,
}

impl DecodeReport {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Decodes every utterance in parallel; records come back in id order.
pub fn decode_set(model: &Model, data: &[Example], opts: &DecodeOptions) -> Result<DecodeReport> {
    if data.is_empty() {
        return Err(Error::Contract("decoding an empty dataset".into()));
    }
    let mut order: Vec<&Example> = data.iter().collect();
    order.sort_by_key(|ex| ex.id);
    let pool = thread_pool()?;
    let records: Vec<Result<DecodeRecord>> = pool.install(|| {
        order
            .par_iter()
            .map(|ex| {
                let out = model.decode_input(&ex.x, opts)?;
                let hypothesis = out.tokens.content().to_vec();
                Ok(DecodeRecord {
                    id: ex.id,
                    reference: ex.y.content().to_vec(),
                    errors: edit_distance(ex.y.content(), &hypothesis),
                    hypothesis,
                    truncated: out.truncated,
                    log_prob: out.log_prob,
                    endpoints: out.trace.iter().map(|a| a.endpoint).collect(),
                })
            })
            .collect()
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let errors: usize = records.iter().map(|r| r.errors).sum();
    let total: usize = records.iter().map(|r| r.reference.len()).sum();
    Ok(DecodeReport {
        records,
        wer: errors as f64 / total as f64,
    })
}

/// Per-step attention of one decoded utterance, one row per output step.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub id: usize,
    pub reference: Vec<usize>,
    /// Decoded tokens including the end token, one per row.
    pub tokens: Vec<usize>,
    pub weights: Mat64,
    pub gates: Option<Mat64>,
}

/// Offline decode of `ex` with the configured beam and length cap.
pub fn dump_attention(model: &Model, ex: &Example, opts: &DecodeOptions) -> Result<AttentionDump> {
    let opts = DecodeOptions { nu: None, ..*opts };
    let h = model.encode(&ex.x)?;
    let out = model.decode(&h, &opts)?;
    let frames = h.len();
    let rows: Vec<Vec<f64>> = out.trace.iter().map(|a| a.weights.clone()).collect();
    let weights = Mat64::from_rows(&rows)?;
    let gates = out
        .trace
        .iter()
        .map(|a| a.gates.clone())
        .collect::<Option<Vec<_>>>()
        .map(|g| Mat64::from_rows(&g))
        .transpose()?;
    crate::error::check_len("dump_attention", frames, weights.cols())?;
    Ok(AttentionDump {
        id: ex.id,
        reference: ex.y.content().to_vec(),
        tokens: out.tokens.as_slice().to_vec(),
        weights,
        gates,
    })
}

/// Row-major CSV without a header.
pub fn matrix_csv(m: &Mat64) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Binary 8-bit greymap, width = columns: `[0, 1]` maps onto `0..=255`.
pub fn matrix_pgm(m: &Mat64) -> Vec<u8> {
    let mut out = format!("P5 {} {} 255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
