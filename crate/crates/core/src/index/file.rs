//! Binary shard files.
//!
//! Layout, little-endian: `"PQIX"`, version u32, shard_id u32, doc_count u64,
//! codebook checksum u64, nbits u32, m_index u32; the postings section
//! (list count u32, then per list: token u32, length u32, LEB128 DocId
//! deltas); the feature section (per doc: DocId u64, code bytes, tokens,
//! annotation block, optional colour signature); and a trailing FNV-1a 64
//! of everything before it.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use super::shard::{StoredDoc, TokenIndexShard};
use crate::error::{Error, Result};
use crate::features::VisualToken;
use crate::model::{fnv1a64, BinaryCode, ColorCluster, ColorSignature, DocId, Lab};

const MAGIC: &[u8; 4] = b"PQIX";
const FORMAT_VERSION: u32 = 1;

pub fn encode_shard(shard: &TokenIndexShard) -> Vec<u8> {
    let mut w: Vec<u8> = Vec::new();
    write_shard(&mut w, shard).expect("writing to a Vec cannot fail");
    let sum = fnv1a64(&w);
    w.write_u64::<LE>(sum).unwrap();
    w
}

fn write_shard(w: &mut Vec<u8>, shard: &TokenIndexShard) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(shard.shard_id as u32)?;
    w.write_u64::<LE>(shard.doc_count() as u64)?;
    w.write_u64::<LE>(shard.codebook_checksum)?;
    w.write_u32::<LE>(shard.nbits as u32)?;
    w.write_u32::<LE>(shard.m_index as u32)?;

    w.write_u32::<LE>(shard.postings.len() as u32)?;
    for (token, list) in &shard.postings {
        w.write_u32::<LE>(token.0)?;
        w.write_u32::<LE>(list.len() as u32)?;
        let mut prev = 0u64;
        for id in list {
            leb128::write::unsigned(w, id.0 - prev)?;
            prev = id.0;
        }
    }

    for (id, doc) in &shard.feature_store {
        w.write_u64::<LE>(id.0)?;
        w.write_all(&doc.code.to_bytes())?;
        w.write_u32::<LE>(doc.tokens.len() as u32)?;
        for t in &doc.tokens {
            w.write_u32::<LE>(t.0)?;
        }
        w.write_u32::<LE>(doc.annotations.len() as u32)?;
        for a in &doc.annotations {
            w.write_u32::<LE>(a.len() as u32)?;
            w.write_all(a.as_bytes())?;
        }
        match &doc.color_signature {
            None => w.write_u8(0)?,
            Some(sig) => {
                w.write_u8(1)?;
                w.write_u32::<LE>(sig.k as u32)?;
                w.write_u32::<LE>(sig.clusters.len() as u32)?;
                for c in &sig.clusters {
                    for x in [c.centroid.l, c.centroid.a, c.centroid.b, c.weight] {
                        w.write_f64::<LE>(x)?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn corrupt(e: impl std::fmt::Display) -> Error {
    Error::corrupt(format!("shard file: {e}"))
}

/// Parses a shard file. With `expected_checksum`, the shard must have been
/// built against that codebook.
pub fn decode_shard(bytes: &[u8], expected_checksum: Option<u64>) -> Result<TokenIndexShard> {
    if bytes.len() < 8 {
        return Err(corrupt("truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if fnv1a64(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Cursor::new(body);
    let shard = read_shard(&mut r).map_err(corrupt)?;
    if r.position() as usize != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    if let Some(sum) = expected_checksum {
        if shard.codebook_checksum != sum {
            return Err(Error::corrupt(format!(
                "shard {} was built with codebook {:016x}, expected {sum:016x}",
                shard.shard_id, shard.codebook_checksum
            )));
        }
    }
    Ok(shard)
}

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

fn read_shard(r: &mut Cursor<&[u8]>) -> std::io::Result<TokenIndexShard> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let shard_id = r.read_u32::<LE>()? as usize;
    let doc_count = r.read_u64::<LE>()?;
    let codebook_checksum = r.read_u64::<LE>()?;
    let nbits = r.read_u32::<LE>()? as usize;
    let m_index = r.read_u32::<LE>()? as usize;
    let mut shard = TokenIndexShard::empty(shard_id, nbits, m_index, codebook_checksum);

    let lists = r.read_u32::<LE>()?;
    let mut postings = BTreeMap::new();
    for _ in 0..lists {
        let token = VisualToken(r.read_u32::<LE>()?);
        let len = r.read_u32::<LE>()?;
        let mut list = Vec::with_capacity(len.min(1 << 20) as usize);
        let mut prev = 0u64;
        for i in 0..len {
            let delta = leb128::read::unsigned(r).map_err(|e| bad(e.to_string()))?;
            if i > 0 && delta == 0 {
                return Err(bad("posting list not strictly ascending"));
            }
            prev = prev.checked_add(delta).ok_or_else(|| bad("DocId overflow"))?;
            list.push(DocId(prev));
        }
        if postings.insert(token, list).is_some() {
            return Err(bad("repeated posting list"));
        }
    }

    let code_len = nbits.div_ceil(8);
    let mut prev: Option<DocId> = None;
    for _ in 0..doc_count {
        let id = DocId(r.read_u64::<LE>()?);
        if prev.is_some_and(|p| p >= id) {
            return Err(bad("feature section not ascending"));
        }
        prev = Some(id);
        let mut code = vec![0u8; code_len];
        r.read_exact(&mut code)?;
        let code = BinaryCode::from_bytes(&code, nbits).map_err(|e| bad(e.to_string()))?;
        let ntok = r.read_u32::<LE>()?;
        let tokens = (0..ntok).map(|_| r.read_u32::<LE>().map(VisualToken)).collect::<std::io::Result<_>>()?;
        let nann = r.read_u32::<LE>()?;
        let mut annotations = Vec::new();
        for _ in 0..nann {
            let len = r.read_u32::<LE>()? as usize;
            if len > r.get_ref().len() {
                return Err(bad("annotation length out of range"));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            annotations.push(String::from_utf8(buf).map_err(|e| bad(e.to_string()))?);
        }
        let color_signature = match r.read_u8()? {
            0 => None,
            1 => {
                let k = r.read_u32::<LE>()? as usize;
                let n = r.read_u32::<LE>()?;
                let mut clusters = Vec::new();
                for _ in 0..n {
                    let l = r.read_f64::<LE>()?;
                    let a = r.read_f64::<LE>()?;
                    let b = r.read_f64::<LE>()?;
                    let weight = r.read_f64::<LE>()?;
                    clusters.push(ColorCluster { centroid: Lab { l, a, b }, weight });
                }
                Some(ColorSignature { clusters, k })
            }
            f => return Err(bad(format!("bad colour flag {f}"))),
        };
        shard.feature_store.insert(id, StoredDoc { code, annotations, color_signature, tokens });
    }
    for list in postings.values() {
        if let Some(id) = list.iter().find(|id| !shard.feature_store.contains_key(id)) {
            return Err(bad(format!("posting references unknown doc {id}")));
        }
    }
    shard.postings = postings;
    Ok(shard)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TokenIndexShard {
        let mut s = TokenIndexShard::empty(2, 12, 2, 0xfeed);
        s.insert(DocId(5), StoredDoc {
            code: BinaryCode::from_bits((0..12).map(|i| i % 3 == 0)),
            annotations: vec!["blue".into(), "shoe".into()],
            color_signature: Some(ColorSignature {
                clusters: vec![ColorCluster { centroid: Lab { l: 50.0, a: -3.5, b: 12.25 }, weight: 1.0 }],
                k: 3,
            }),
            tokens: vec![VisualToken(4), VisualToken(1)],
        });
        s.insert(DocId(900), StoredDoc {
            code: BinaryCode::zeros(12),
            annotations: vec![],
            color_signature: None,
            tokens: vec![VisualToken(1), VisualToken(7)],
        });
        s
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let bytes = encode_shard(&s);
        assert_eq!(&bytes[..4], b"PQIX");
        assert_eq!(decode_shard(&bytes, Some(0xfeed)).unwrap(), s);
        assert_eq!(encode_shard(&decode_shard(&bytes, None).unwrap()), bytes);
    }

    #[test]
    fn detects_damage() {
        let bytes = encode_shard(&sample());
        assert!(matches!(decode_shard(&bytes, Some(1)), Err(Error::Corrupt(_))));
        for i in [0, 9, 40, bytes.len() - 20, bytes.len() - 1] {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(decode_shard(&b, None), Err(Error::Corrupt(_))), "byte {i}");
        }
        assert!(decode_shard(&bytes[..bytes.len() - 3], None).is_err());
        assert!(decode_shard(&[], None).is_err());
    }
}
