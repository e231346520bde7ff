//! JSON-Lines episode files: one object per line with `id`, `frames`,
//! optional scored `regions` per frame, and caption strings.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kvmn_core::data::{build_vocab, Episode, Region, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRegion {
    pub f: Vec<f64>,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEpisode {
    pub id: String,
    pub frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<Vec<RawRegion>>>,
    pub captions: Vec<String>,
}

impl RawEpisode {
    /// Tokenized, encoded and validated against `vocab` (unknown words map to UNK).
    pub fn to_episode(&self, vocab: &Vocabulary) -> kvmn_core::Result<Episode> {
        let regions = self.regions.as_ref().map(|sets| {
            sets.iter()
                .map(|set| set.iter().map(|r| Region { feature: r.f.clone(), score: r.s }).collect())
                .collect()
        });
        let captions = self.captions.iter().map(|c| vocab.encode(c)).collect();
        let ep = Episode { id: self.id.clone(), frames: self.frames.clone(), regions, captions };
        ep.validate(vocab.len())?;
        if let Some(sets) = &ep.regions {
            for (i, set) in sets.iter().enumerate() {
                let d = set.first().map(|r| r.feature.len());
                if d == Some(0) || set.iter().any(|r| Some(r.feature.len()) != d) {
                    return Err(kvmn_core::Error::Shape(format!("episode {}: ragged regions in frame {i}", ep.id)));
                }
            }
        }
        Ok(ep)
    }

    pub fn from_episode(ep: &Episode, vocab: &Vocabulary) -> Self {
        RawEpisode {
            id: ep.id.clone(),
            frames: ep.frames.clone(),
            regions: ep.regions.as_ref().map(|sets| {
                sets.iter()
                    .map(|set| set.iter().map(|r| RawRegion { f: r.feature.clone(), s: r.score }).collect())
                    .collect()
            }),
            captions: ep.captions.iter().map(|c| vocab.decode_text(c)).collect(),
        }
    }
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

/// Parses every non-blank line; errors carry the 1-based line number.
pub fn read_jsonl(path: &Path) -> CliResult<Vec<RawEpisode>> {
    Ok(read_numbered(path)?.into_iter().map(|(_, r)| r).collect())
}

fn read_numbered(path: &Path) -> CliResult<Vec<(usize, RawEpisode)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| line_err(i + 1, e))?));
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, episodes: &[RawEpisode]) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Vocabulary over every caption of `raw`.
pub fn vocab_of(raw: &[RawEpisode], min_count: usize) -> Vocabulary {
    build_vocab(raw.iter().flat_map(|r| r.captions.iter().map(String::as_str)), min_count)
}

/// Loads and validates a dataset file against `vocab`.
pub fn load_dataset(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<Episode>> {
    read_numbered(path)?
        .iter()
        .map(|(line, r)| r.to_episode(vocab).map_err(|e| line_err(*line, e)))
        .collect()
}
