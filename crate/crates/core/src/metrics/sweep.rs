use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::AttentionKind;
use crate::model::{thread_pool, Example, Model};
use crate::streaming::{endpoint_fraction, stream_decode_encoded};

use super::{edit_distance, lag_schedule, LagRecord};

/// One CSV row: corpus-level token error, mean lagging and mean endpoint fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nu: f64,
    pub wer: f64,
    pub al_frames: f64,
    pub al_seconds: f64,
    pub endpoint_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceDetail {
    pub nu: f64,
    pub id: usize,
    pub errors: usize,
    pub ref_len: usize,
    pub wer: f64,
    pub hypothesis: Vec<usize>,
    pub truncated: bool,
    pub t_end: Vec<usize>,
    pub endpoint_fraction: f64,
    pub lag: LagRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Grouped by threshold, then ordered by utterance id.
    pub details: Vec<UtteranceDetail>,
}

impl Sweep {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Contract(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.details {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn details_for(&self, nu: f64) -> impl Iterator<Item = &UtteranceDetail> {
        self.details.iter().filter(move |d| d.nu == nu)
    }
}

fn utterance(model: &Model, ex: &Example, nu: f64, max_len: usize, frame_period: f64) -> Result<UtteranceDetail> {
    let h = model.encode(&ex.x)?;
    let out = stream_decode_encoded(model, &h, nu, max_len)?;
    let reference = ex.y.content();
    let hypothesis = out.decoded.tokens.content().to_vec();
    let errors = edit_distance(reference, &hypothesis);
    let t_end = out.log.endpoints();
    let dims = model.dims();
    let g = lag_schedule(&t_end, ex.x.rows(), dims.stride, dims.lookahead);
    Ok(UtteranceDetail {
        nu,
        id: ex.id,
        errors,
        ref_len: reference.len(),
        wer: errors as f64 / reference.len() as f64,
        hypothesis,
        truncated: out.decoded.truncated,
        endpoint_fraction: endpoint_fraction(&out.log, h.len(), t_end.len())?,
        t_end,
        lag: LagRecord::new(g, ex.x.rows(), frame_period)?,
    })
}

/// Online decoding of every utterance at every threshold. Rows come back
/// sorted by `ν`; utterances run in parallel and are aggregated in id order.
pub fn sweep_threshold(
    model: &Model,
    data: &[Example],
    nus: &[f64],
    max_len: usize,
    frame_period: f64,
) -> Result<Sweep> {
    if model.kind() != AttentionKind::DecGrc {
        return Err(Error::Config(format!(
            "threshold sweep needs a decgrc model, got {}",
            model.kind()
        )));
    }
    if nus.is_empty() {
        return Err(Error::Config("threshold list is empty".into()));
    }
    if data.is_empty() {
        return Err(Error::Contract("sweep over an empty dataset".into()));
    }
    if let Some(bad) = nus.iter().find(|nu| !(0.0..=1.0).contains(*nu)) {
        return Err(Error::Config(format!("threshold {bad} outside [0, 1]")));
    }
    let mut sorted = nus.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut order: Vec<&Example> = data.iter().collect();
    order.sort_by_key(|ex| ex.id);
    let pool = thread_pool()?;
    let mut rows = Vec::with_capacity(sorted.len());
    let mut details = Vec::with_capacity(sorted.len() * data.len());
    for &nu in &sorted {
        let per: Vec<Result<UtteranceDetail>> = pool.install(|| {
            order
                .par_iter()
                .map(|ex| utterance(model, ex, nu, max_len, frame_period))
                .collect()
        });
        let per = per.into_iter().collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        let errors: usize = per.iter().map(|d| d.errors).sum();
        let ref_len: usize = per.iter().map(|d| d.ref_len).sum();
        let al_frames = per.iter().map(|d| d.lag.al_frames).sum::<f64>() / n;
        rows.push(SweepRow {
            nu,
            wer: errors as f64 / ref_len as f64,
            al_frames,
            al_seconds: al_frames * frame_period,
            endpoint_fraction: per.iter().map(|d| d.endpoint_fraction).sum::<f64>() / n,
        });
        details.extend(per);
    }
    Ok(Sweep { rows, details })
}
