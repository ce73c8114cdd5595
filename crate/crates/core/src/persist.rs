//! Versioned binary model files.
//!
//! Layout: 4-byte magic, little-endian u16 format version, length-prefixed kind tag,
//! then the bincode payload.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::predictor::lstm::TrainedLstm;
use crate::sentiment::Forest;

pub const MAGIC: &[u8; 4] = b"ICMB";
pub const FORMAT_VERSION: u16 = 1;

pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Validate and rebuild derived state after decoding.
    fn restore(&mut self) -> Result<()> {
        Ok(())
    }
}

impl Persist for Forest {
    const KIND: &'static str = "forest";

    fn restore(&mut self) -> Result<()> {
        if self.is_consistent() {
            Ok(())
        } else {
            Err(Error::Format("forest references features outside its schema".into()))
        }
    }
}

impl Persist for TrainedLstm {
    const KIND: &'static str = "lstm";

    fn restore(&mut self) -> Result<()> {
        let p = &self.params;
        let h = p.hidden;
        if p.w.len() != 4 * h * p.n_in || p.u.len() != 4 * h * h || p.b.len() != 4 * h || p.theta.len() != h {
            return Err(Error::Format("lstm parameter shapes do not agree".into()));
        }
        Ok(())
    }
}

impl Persist for EmbeddingTable {
    const KIND: &'static str = "embeddings";

    fn restore(&mut self) -> Result<()> {
        self.reindex();
        Ok(())
    }
}

pub fn to_bytes<T: Persist>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::KIND.len() as u8);
    out.extend_from_slice(T::KIND.as_bytes());
    bincode::serialize_into(&mut out, value).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

pub fn from_bytes<T: Persist>(bytes: &[u8]) -> Result<T> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = bytes[6] as usize;
    let kind = bytes
        .get(7..7 + n)
        .and_then(|k| std::str::from_utf8(k).ok())
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    if kind != T::KIND {
        return Err(Error::Format(format!("file holds a {kind} model, expected {}", T::KIND)));
    }
    let mut value: T = bincode::deserialize(&bytes[7 + n..]).map_err(|e| Error::Format(e.to_string()))?;
    value.restore()?;
    Ok(value)
}

pub fn save<T: Persist>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(value)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Persist>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{train_embeddings, BipartiteMultigraph, EmbedConfig};
    use crate::predictor::lstm::{LstmConfig, LstmParams};
    use crate::rng::seeded;
    use crate::sentiment::forest::train_forest_rows;
    use crate::sentiment::ForestConfig;

    #[test]
    fn forest_round_trip_predicts_identically() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let cfg = ForestConfig {
            trees: 15,
            ..ForestConfig::default()
        };
        let f = train_forest_rows(vec!["a".into(), "b".into()], &rows, &labels, &cfg).unwrap();
        let g: Forest = from_bytes(&to_bytes(&f).unwrap()).unwrap();
        assert_eq!(f, g);
        for r in &rows {
            assert_eq!(f.predict_row(r).to_bits(), g.predict_row(r).to_bits());
        }
    }

    #[test]
    fn lstm_and_embeddings_round_trip() {
        let params = LstmParams::init(3, 4, &mut seeded(1));
        let m = TrainedLstm {
            params,
            config: LstmConfig::default(),
            best_epoch: 0,
            log: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        save(&m, dir.path().join("m.bin")).unwrap();
        assert_eq!(load::<TrainedLstm>(dir.path().join("m.bin")).unwrap(), m);

        let g = BipartiteMultigraph::from_pairs([("u1", "a"), ("u2", "b")]);
        let t = train_embeddings(
            &g,
            &EmbedConfig {
                dim: 4,
                epochs: 2,
                ..EmbedConfig::default()
            },
        )
        .unwrap();
        let back: EmbeddingTable = from_bytes(&to_bytes(&t).unwrap()).unwrap();
        assert_eq!(back.users.get("u2"), t.users.get("u2"));
    }

    #[test]
    fn wrong_kind_version_and_garbage_are_rejected() {
        let m = TrainedLstm {
            params: LstmParams::init(2, 2, &mut seeded(0)),
            config: LstmConfig::default(),
            best_epoch: 0,
            log: Vec::new(),
        };
        let bytes = to_bytes(&m).unwrap();
        assert!(matches!(from_bytes::<Forest>(&bytes), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(from_bytes::<TrainedLstm>(&v), Err(Error::Format(_))));
        assert!(matches!(from_bytes::<TrainedLstm>(b"hello"), Err(Error::Format(_))));
        assert!(matches!(
            from_bytes::<TrainedLstm>(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
