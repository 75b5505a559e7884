//! Little-endian binary layout of an [`EmbeddingStore`].
//!
//! ```text
//! "FDTI" | version u32 = 1
//! n_drugs u32 | n_prots u32 | d_drug u32 | d_prot u32 | n_records u64
//! label_kind u8 | flags u8 (bit0: splits present) | 6 reserved zero bytes
//! drug ids: n_drugs × (u16 length, UTF-8 bytes), then protein ids likewise
//! drug matrix: n_drugs·d_drug f32 row-major, then protein matrix likewise
//! records: n_records × (drug u32, prot u32, label f32 (NaN = absent),
//!                       split u8, 3 reserved zero bytes)
//! ```

use std::collections::HashSet;
use std::path::Path;

use super::{label_is_valid, EmbeddingStore, LabelKind, Record, Split};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"FDTI";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
pub const RECORD_LEN: usize = 16;
const FLAG_SPLITS: u8 = 0b1;

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    store.validate()?;
    let as_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Validation(format!("{what} {n} exceeds u32")))
    };
    let mut out = Vec::with_capacity(
        HEADER_LEN
            + 4 * (store.drug_matrix.len() + store.prot_matrix.len())
            + RECORD_LEN * store.records.len(),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&as_u32(store.n_drugs(), "n_drugs")?.to_le_bytes());
    out.extend_from_slice(&as_u32(store.n_prots(), "n_prots")?.to_le_bytes());
    out.extend_from_slice(&as_u32(store.d_drug, "d_drug")?.to_le_bytes());
    out.extend_from_slice(&as_u32(store.d_prot, "d_prot")?.to_le_bytes());
    out.extend_from_slice(&(store.records.len() as u64).to_le_bytes());
    out.push(store.label_kind as u8);
    out.push(if store.splits_present { FLAG_SPLITS } else { 0 });
    out.extend_from_slice(&[0u8; 6]);
    for id in store.drug_ids.iter().chain(&store.prot_ids) {
        let len = u16::try_from(id.len()).map_err(|_| {
            Error::Validation(format!(
                "id of {} bytes exceeds u16 length prefix",
                id.len()
            ))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in store.drug_matrix.iter().chain(&store.prot_matrix) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in &store.records {
        out.extend_from_slice(&r.drug.to_le_bytes());
        out.extend_from_slice(&r.prot.to_le_bytes());
        out.extend_from_slice(&r.label.unwrap_or(f32::NAN).to_le_bytes());
        out.push(r.split as u8);
        out.extend_from_slice(&[0u8; 3]);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.buf.len() as u64,
                what,
            }),
        }
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }
}

/// Parses and validates a store image.
pub fn decode_store(buf: &[u8]) -> Result<EmbeddingStore, FormatError> {
    let mut rd = Reader { buf, pos: 0 };
    let magic: [u8; 4] = rd.array("magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n_drugs = rd.u32("header")?;
    let n_prots = rd.u32("header")?;
    let d_drug = rd.u32("header")? as usize;
    let d_prot = rd.u32("header")? as usize;
    let n_records = rd.u64("header")?;
    let kind_offset = rd.offset();
    let kind_byte = rd.u8("header")?;
    let label_kind = LabelKind::from_u8(kind_byte).ok_or(FormatError::BadLabelKind {
        value: kind_byte,
        offset: kind_offset,
    })?;
    let flags_offset = rd.offset();
    let flags = rd.u8("header")?;
    if flags & !FLAG_SPLITS != 0 {
        return Err(FormatError::ReservedNonZero {
            offset: flags_offset,
        });
    }
    let reserved_offset = rd.offset();
    if rd.take(6, "header")?.iter().any(|&b| b != 0) {
        return Err(FormatError::ReservedNonZero {
            offset: reserved_offset,
        });
    }

    let mut read_ids = |n: u32| -> Result<Vec<String>, FormatError> {
        let mut ids = Vec::with_capacity((n as usize).min(1 << 16));
        for _ in 0..n {
            let len = rd.u16("id length")? as usize;
            let at = rd.offset();
            let bytes = rd.take(len, "id bytes")?;
            let id =
                std::str::from_utf8(bytes).map_err(|_| FormatError::InvalidUtf8 { offset: at })?;
            ids.push(id.to_string());
        }
        Ok(ids)
    };
    let drug_ids = read_ids(n_drugs)?;
    let prot_ids = read_ids(n_prots)?;

    let mut read_matrix =
        |rows: u32, cols: usize, name: &'static str| -> Result<Vec<f32>, FormatError> {
            let n = (rows as usize)
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4));
            let bytes_at = rd.offset();
            let bytes = match n {
                Some(n) => rd.take(n, name)?,
                None => {
                    return Err(FormatError::Truncated {
                        offset: buf.len() as u64,
                        what: name,
                    });
                }
            };
            bytes
                .chunks_exact(4)
                .enumerate()
                .map(|(i, c)| {
                    let v = f32::from_le_bytes(c.try_into().expect("chunk of 4"));
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(FormatError::NonFiniteEmbedding {
                            matrix: name,
                            offset: bytes_at + 4 * i as u64,
                        })
                    }
                })
                .collect()
        };
    let drug_matrix = read_matrix(n_drugs, d_drug, "drug matrix")?;
    let prot_matrix = read_matrix(n_prots, d_prot, "protein matrix")?;

    let remaining = (buf.len() - rd.pos) as u64;
    if n_records
        .checked_mul(RECORD_LEN as u64)
        .is_none_or(|need| need > remaining)
    {
        return Err(FormatError::Truncated {
            offset: buf.len() as u64,
            what: "records",
        });
    }
    let mut records = Vec::with_capacity(n_records as usize);
    let mut seen = HashSet::with_capacity(n_records as usize);
    for record in 0..n_records {
        let at = rd.offset();
        let drug = rd.u32("record")?;
        let prot = rd.u32("record")?;
        let raw_label = rd.f32("record")?;
        let split_byte = rd.u8("record")?;
        let reserved = rd.take(3, "record")?;
        for (side, index, bound, field) in
            [("drug", drug, n_drugs, 0), ("protein", prot, n_prots, 4)]
        {
            if index >= bound {
                return Err(FormatError::IndexOutOfRange {
                    record,
                    side,
                    index,
                    bound,
                    offset: at + field,
                });
            }
        }
        let label = if raw_label.is_nan() {
            None
        } else {
            Some(raw_label)
        };
        if !label_is_valid(label_kind, label) {
            return Err(FormatError::BadLabel {
                record,
                value: raw_label,
                offset: at + 8,
            });
        }
        let split = Split::from_u8(split_byte).ok_or(FormatError::BadSplitTag {
            record,
            value: split_byte,
            offset: at + 12,
        })?;
        if reserved.iter().any(|&b| b != 0) {
            return Err(FormatError::ReservedNonZero { offset: at + 13 });
        }
        if !seen.insert((split, drug, prot)) {
            return Err(FormatError::DuplicatePair {
                record,
                drug,
                prot,
                offset: at,
            });
        }
        records.push(Record {
            drug,
            prot,
            label,
            split,
        });
    }
    if rd.pos != buf.len() {
        return Err(FormatError::TrailingBytes((buf.len() - rd.pos) as u64));
    }
    Ok(EmbeddingStore {
        d_drug,
        d_prot,
        drug_ids,
        prot_ids,
        drug_matrix,
        prot_matrix,
        label_kind,
        splits_present: flags & FLAG_SPLITS != 0,
        records,
    })
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&buf).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_store(store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
