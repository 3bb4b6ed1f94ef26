use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_wav_expecting, save_wav, synth_speaker_utterance, Waveform};
use crate::error::{Error, Result};

/// One line of a JSON-lines corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub speaker_id: u64,
    /// Relative paths are resolved against the manifest's directory.
    pub path: String,
    pub duration_s: f64,
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn utterance_seed(seed: u64, speaker: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ speaker.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (index as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Parameters for a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub first_speaker: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            utts_per_speaker: 12,
            first_speaker: 0,
            min_duration_s: 2.0,
            max_duration_s: 4.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: u64,
    pub wave: Waveform,
}

/// In-memory collection of utterances indexed by speaker.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    utts: Vec<Utterance>,
    by_speaker: BTreeMap<u64, Vec<usize>>,
}

impl Corpus {
    pub fn from_utterances(utts: Vec<Utterance>) -> Self {
        let mut by_speaker: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, u) in utts.iter().enumerate() {
            by_speaker.entry(u.speaker_id).or_default().push(i);
        }
        Self { utts, by_speaker }
    }

    /// Generates the corpus described by `spec` without touching the filesystem.
    pub fn synthetic(spec: &CorpusSpec) -> Result<Self> {
        Ok(Self::from_utterances(
            synth_records(spec)?
                .into_iter()
                .map(|(rec, wave)| Utterance {
                    utt_id: rec.utt_id,
                    speaker_id: rec.speaker_id,
                    wave,
                })
                .collect(),
        ))
    }

    pub fn from_manifest(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let utts = read_manifest(path)?
            .into_iter()
            .map(|r| {
                let p = PathBuf::from(&r.path);
                let p = if p.is_absolute() { p } else { base.join(p) };
                Ok(Utterance {
                    wave: load_wav_expecting(&p, sample_rate)?,
                    utt_id: r.utt_id,
                    speaker_id: r.speaker_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_utterances(utts))
    }

    pub fn len(&self) -> usize {
        self.utts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utts.is_empty()
    }

    pub fn get(&self, i: usize) -> &Utterance {
        &self.utts[i]
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utts
    }

    pub fn speakers(&self) -> Vec<u64> {
        self.by_speaker.keys().copied().collect()
    }

    pub fn utterances_of(&self, speaker: u64) -> &[usize] {
        self.by_speaker
            .get(&speaker)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Splits off the last `per_speaker` utterances of every speaker.
    pub fn split_tail(&self, per_speaker: usize) -> (Corpus, Corpus) {
        let mut head = Vec::new();
        let mut tail = Vec::new();
        for idx in self.by_speaker.values() {
            let cut = idx.len().saturating_sub(per_speaker);
            head.extend(idx[..cut].iter().map(|&i| self.utts[i].clone()));
            tail.extend(idx[cut..].iter().map(|&i| self.utts[i].clone()));
        }
        (Corpus::from_utterances(head), Corpus::from_utterances(tail))
    }
}

fn synth_records(spec: &CorpusSpec) -> Result<Vec<(ManifestRecord, Waveform)>> {
    if spec.min_duration_s <= 0.0 || spec.max_duration_s < spec.min_duration_s {
        return Err(Error::InvalidArgument(format!(
            "bad duration range [{}, {}]",
            spec.min_duration_s, spec.max_duration_s
        )));
    }
    let mut out = Vec::with_capacity(spec.n_speakers * spec.utts_per_speaker);
    for s in 0..spec.n_speakers as u64 {
        let speaker = spec.first_speaker + s;
        for j in 0..spec.utts_per_speaker {
            let useed = utterance_seed(spec.seed, speaker, j);
            let mut rng = ChaCha8Rng::seed_from_u64(useed);
            let dur = if spec.max_duration_s > spec.min_duration_s {
                rng.random_range(spec.min_duration_s..spec.max_duration_s)
            } else {
                spec.min_duration_s
            };
            let dur = (dur * 100.0).round() / 100.0;
            let wave = synth_speaker_utterance(speaker, dur, useed)?;
            let utt_id = format!("spk{speaker:03}_utt{j:03}");
            out.push((
                ManifestRecord {
                    path: format!("{utt_id}.wav"),
                    utt_id,
                    speaker_id: speaker,
                    duration_s: wave.duration_s(),
                },
                wave,
            ));
        }
    }
    Ok(out)
}

/// Writes WAVs plus `manifest.jsonl` into `out_dir` and returns the records.
pub fn synth_corpus(out_dir: impl AsRef<Path>, spec: &CorpusSpec) -> Result<Vec<ManifestRecord>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    for (rec, wave) in synth_records(spec)? {
        save_wav(out_dir.join(&rec.path), &wave)?;
        records.push(rec);
    }
    write_manifest(out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_corpus_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            n_speakers: 2,
            utts_per_speaker: 3,
            min_duration_s: 0.3,
            max_duration_s: 0.6,
            seed: 4,
            ..CorpusSpec::default()
        };
        let recs = synth_corpus(dir.path(), &spec).unwrap();
        assert_eq!(recs.len(), 6);
        let back = read_manifest(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(recs, back);
        let corpus = Corpus::from_manifest(dir.path().join("manifest.jsonl"), 8000).unwrap();
        assert_eq!(corpus.speakers(), vec![0, 1]);
        assert_eq!(corpus.utterances_of(1).len(), 3);
        let mem = Corpus::synthetic(&spec).unwrap();
        for (a, b) in mem.utterances().iter().zip(corpus.utterances()) {
            assert_eq!(a.utt_id, b.utt_id);
            let err = a
                .wave
                .samples()
                .iter()
                .zip(b.wave.samples())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(err <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn manifest_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            "{\"utt_id\":\"a\",\"speaker_id\":1,\"path\":\"a.wav\",\"duration_s\":1.0,\"x\":1}\n",
        )
        .unwrap();
        assert!(read_manifest(&p).is_err());
    }

    #[test]
    fn split_tail_holds_out_per_speaker() {
        let spec = CorpusSpec {
            n_speakers: 3,
            utts_per_speaker: 4,
            min_duration_s: 0.3,
            max_duration_s: 0.4,
            ..CorpusSpec::default()
        };
        let c = Corpus::synthetic(&spec).unwrap();
        let (train, held) = c.split_tail(1);
        assert_eq!(train.len(), 9);
        assert_eq!(held.len(), 3);
        assert_eq!(held.speakers(), vec![0, 1, 2]);
    }
}
