//! Per-step trace rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// One environment interaction. Vector fields hold `;`-separated values in
/// expert order; floats use shortest round-trip formatting so the file
/// reproduces in-memory values exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub global_step: u64,
    pub category: String,
    pub tag: String,
    pub mask: String,
    pub state_digest: String,
    pub w_expert: String,
    pub w_channel: String,
    pub w_final: String,
    pub degenerate: bool,
    pub invoked: String,
    pub snr_db: String,
    pub aggregate_quality: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r_llm: f64,
    pub q_bar: f64,
    pub stability: f64,
    pub load_entropy: f64,
    pub spectral_eff: f64,
    pub r_channel: f64,
    pub r_final: f64,
    pub expert_entropy: f64,
    pub burst_active: bool,
    pub masked_invocations: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub asem_loss: f64,
    pub meta_w_llm: f64,
    pub meta_w_channel: f64,
}

pub fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

pub fn split_f64(text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| SimError::Trace(format!("bad value '{s}': {e}")))
        })
        .collect()
}

pub fn join_usize(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn split_usize(text: &str) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|s| {
            s.parse::<usize>()
                .map_err(|e| SimError::Trace(format!("bad index '{s}': {e}")))
        })
        .collect()
}

pub fn write_trace<W: Write>(out: W, rows: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(SimError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: usize, step: usize) -> StepRecord {
        StepRecord {
            episode,
            step,
            global_step: (episode * 16 + step) as u64,
            category: "general".into(),
            tag: "general".into(),
            mask: "1;0;1".into(),
            state_digest: "ab".into(),
            w_expert: join_f64(&[0.1, 0.2, 0.7]),
            w_channel: join_f64(&[1.0 / 3.0; 3]),
            w_final: join_f64(&[0.125, 0.0, 0.875]),
            degenerate: false,
            invoked: join_usize(&[0, 2]),
            snr_db: join_f64(&[21.5, -3.25, 1e-7]),
            aggregate_quality: 0.8,
            r1: 1.0,
            r2: 1.0,
            r3: 0.3,
            r4: 0.9,
            r_llm: 0.8,
            q_bar: 0.7,
            stability: 0.6,
            load_entropy: 0.5,
            spectral_eff: 0.4,
            r_channel: 0.55,
            r_final: 0.675,
            expert_entropy: 0.34,
            burst_active: false,
            masked_invocations: 0,
            critic_loss: f64::NAN,
            actor_loss: 0.1 + 0.2,
            asem_loss: -1.5,
            meta_w_llm: 0.5,
            meta_w_channel: 0.5,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![row(0, 0), row(0, 1), row(1, 0)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.actor_loss.to_bits(), b.actor_loss.to_bits());
            assert!(b.critic_loss.is_nan());
            assert_eq!(split_f64(&a.w_channel).unwrap(), split_f64(&b.w_channel).unwrap());
            assert_eq!(split_f64(&b.snr_db).unwrap()[2], 1e-7);
        }
        let header = String::from_utf8(buf).unwrap();
        assert!(header.starts_with("episode,step,global_step,category,"));
    }

    #[test]
    fn empty_lists() {
        assert!(split_f64("").unwrap().is_empty());
        assert!(split_usize("").unwrap().is_empty());
        assert_eq!(split_usize(&join_usize(&[3, 1])).unwrap(), vec![3, 1]);
    }
}
