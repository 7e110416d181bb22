//! Cell data model: bounded bit strings with up to four child references.
//!
//! Contract storage, message bodies and addresses are all cell trees. Cells
//! are immutable and cheap to clone (the payload is reference counted), so a
//! world snapshot shares every unchanged subtree with the live world.
//!
//! The byte encoding produced by [`Cell::serialize`] is canonical:
//!
//! ```text
//! cell := bit_len:u16be  data:[u8; ceil(bit_len / 8)]  ref_count:u8  cell{ref_count}
//! ```
//!
//! Unused low bits of the final data byte are always zero, children follow
//! depth-first. [`Cell::hash`] is SHA-256 over that encoding.

use std::fmt;
use std::sync::{Arc, OnceLock};

use base64::Engine as _;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAX_BITS: usize = 1023;
pub const MAX_REFS: usize = 4;
/// Widest integer that can be loaded or stored in one operation.
pub const MAX_INT_BITS: u32 = 128;
/// Nesting bound applied when decoding untrusted bytes.
pub const MAX_DECODE_DEPTH: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CellError {
    #[error("cell overflow: {bits} bits exceeds the {MAX_BITS}-bit limit")]
    BitOverflow { bits: usize },
    #[error("cell overflow: more than {MAX_REFS} references")]
    RefOverflow,
    #[error("cell underflow: need {needed} bits, {remaining} remaining")]
    BitUnderflow { needed: usize, remaining: usize },
    #[error("cell underflow: no references left")]
    RefUnderflow,
    #[error("integer width {0} exceeds {MAX_INT_BITS} bits")]
    WidthTooLarge(u32),
    #[error("value does not fit in {0} bits")]
    ValueOutOfRange(u32),
    #[error("malformed cell encoding: {0}")]
    Malformed(String),
}

struct CellInner {
    data: Vec<u8>,
    bit_len: usize,
    refs: Vec<Cell>,
    hash: OnceLock<[u8; 32]>,
}

/// An immutable cell. Equality is structural.
#[derive(Clone)]
pub struct Cell(Arc<CellInner>);

impl Cell {
    pub fn empty() -> Cell {
        Cell(Arc::new(CellInner { data: Vec::new(), bit_len: 0, refs: Vec::new(), hash: OnceLock::new() }))
    }

    /// Builds a cell from raw bytes holding `bit_len` bits (MSB first).
    /// Bytes beyond the bit length are dropped and stray low bits cleared.
    pub fn from_raw(mut data: Vec<u8>, bit_len: usize, refs: Vec<Cell>) -> Result<Cell, CellError> {
        if bit_len > MAX_BITS {
            return Err(CellError::BitOverflow { bits: bit_len });
        }
        if refs.len() > MAX_REFS {
            return Err(CellError::RefOverflow);
        }
        let byte_len = bit_len.div_ceil(8);
        if data.len() < byte_len {
            return Err(CellError::Malformed(format!(
                "{} data bytes cannot hold {bit_len} bits",
                data.len()
            )));
        }
        data.truncate(byte_len);
        if !bit_len.is_multiple_of(8) {
            let last = data.last_mut().expect("nonzero bit_len has a byte");
            *last &= 0xFFu8 << (8 - bit_len % 8);
        }
        Ok(Cell(Arc::new(CellInner { data, bit_len, refs, hash: OnceLock::new() })))
    }

    /// A cell holding `value` as an unsigned big-endian integer of `bits` width.
    pub fn from_uint(value: u128, bits: u32) -> Result<Cell, CellError> {
        let mut b = Builder::new();
        b.store_uint(value, bits)?;
        Ok(b.build())
    }

    pub fn bit_len(&self) -> usize {
        self.0.bit_len
    }

    pub fn data(&self) -> &[u8] {
        &self.0.data
    }

    pub fn refs(&self) -> &[Cell] {
        &self.0.refs
    }

    pub fn bit(&self, index: usize) -> bool {
        debug_assert!(index < self.0.bit_len);
        self.0.data[index / 8] >> (7 - index % 8) & 1 == 1
    }

    pub fn is_empty(&self) -> bool {
        self.0.bit_len == 0 && self.0.refs.is_empty()
    }

    /// Returns a copy with bit `index` inverted.
    pub fn with_flipped_bit(&self, index: usize) -> Cell {
        let mut data = self.0.data.clone();
        data[index / 8] ^= 1 << (7 - index % 8);
        Cell::from_raw(data, self.0.bit_len, self.0.refs.clone()).expect("shape unchanged")
    }

    /// Returns a copy with child `index` replaced.
    pub fn with_ref(&self, index: usize, child: Cell) -> Cell {
        let mut refs = self.0.refs.clone();
        refs[index] = child;
        Cell::from_raw(self.0.data.clone(), self.0.bit_len, refs).expect("shape unchanged")
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.0.data.len());
        self.write_into(&mut out);
        out
    }

    fn write_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.bit_len as u16).to_be_bytes());
        out.extend_from_slice(&self.0.data);
        out.push(self.0.refs.len() as u8);
        for child in &self.0.refs {
            child.write_into(out);
        }
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Cell, CellError> {
        let mut pos = 0;
        let cell = Self::read_from(bytes, &mut pos, 0)?;
        if pos != bytes.len() {
            return Err(CellError::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(cell)
    }

    fn read_from(bytes: &[u8], pos: &mut usize, depth: usize) -> Result<Cell, CellError> {
        if depth > MAX_DECODE_DEPTH {
            return Err(CellError::Malformed("cell tree too deep".into()));
        }
        let truncated = || CellError::Malformed("truncated input".into());
        let header = bytes.get(*pos..*pos + 2).ok_or_else(truncated)?;
        let bit_len = u16::from_be_bytes([header[0], header[1]]) as usize;
        if bit_len > MAX_BITS {
            return Err(CellError::Malformed(format!("bit length {bit_len} exceeds {MAX_BITS}")));
        }
        *pos += 2;
        let byte_len = bit_len.div_ceil(8);
        let data = bytes.get(*pos..*pos + byte_len).ok_or_else(truncated)?.to_vec();
        if !bit_len.is_multiple_of(8) && data[byte_len - 1] & (0xFF >> (bit_len % 8)) != 0 {
            return Err(CellError::Malformed("nonzero padding bits".into()));
        }
        *pos += byte_len;
        let ref_count = *bytes.get(*pos).ok_or_else(truncated)? as usize;
        if ref_count > MAX_REFS {
            return Err(CellError::Malformed(format!("reference count {ref_count} exceeds {MAX_REFS}")));
        }
        *pos += 1;
        let mut refs = Vec::with_capacity(ref_count);
        for _ in 0..ref_count {
            refs.push(Self::read_from(bytes, pos, depth + 1)?);
        }
        Cell::from_raw(data, bit_len, refs)
    }

    /// SHA-256 of the canonical serialization, cached per cell.
    pub fn hash(&self) -> [u8; 32] {
        *self.0.hash.get_or_init(|| Sha256::digest(self.serialize()).into())
    }

    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.serialize())
    }

    pub fn from_base64(text: &str) -> Result<Cell, CellError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.trim())
            .map_err(|e| CellError::Malformed(format!("base64: {e}")))?;
        Cell::deserialize(&bytes)
    }

    /// Total (cells, bits) over the tree, counting every reference occurrence.
    pub fn tree_stats(&self) -> (u64, u64) {
        let mut cells = 1u64;
        let mut bits = self.0.bit_len as u64;
        for child in &self.0.refs {
            let (c, b) = child.tree_stats();
            cells += c;
            bits += b;
        }
        (cells, bits)
    }

    /// Renders bits `[start, end)` as `x{HEX}` (length a multiple of 4) or `b{0101}`.
    pub fn render_bits(&self, start: usize, end: usize) -> String {
        let end = end.min(self.0.bit_len);
        let start = start.min(end);
        let len = end - start;
        if len.is_multiple_of(4) {
            let mut s = String::with_capacity(len / 4 + 3);
            s.push_str("x{");
            for nibble in 0..len / 4 {
                let mut v = 0u8;
                for k in 0..4 {
                    v = v << 1 | self.bit(start + nibble * 4 + k) as u8;
                }
                s.push(char::from_digit(v as u32, 16).unwrap().to_ascii_uppercase());
            }
            s.push('}');
            s
        } else {
            let bits: String = (start..end).map(|i| if self.bit(i) { '1' } else { '0' }).collect();
            format!("b{{{bits}}}")
        }
    }
}

impl Default for Cell {
    fn default() -> Self {
        Cell::empty()
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Cell) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.bit_len == other.0.bit_len
                && self.0.data == other.0.data
                && self.0.refs == other.0.refs)
    }
}

impl Eq for Cell {}

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render_bits(0, self.bit_len()))?;
        if !self.refs().is_empty() {
            f.debug_list().entries(self.refs()).finish()?;
        }
        Ok(())
    }
}

/// Growable cell under construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Builder {
    data: Vec<u8>,
    bit_len: usize,
    refs: Vec<Cell>,
}

impl Builder {
    pub fn new() -> Builder {
        Builder::default()
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn ref_count(&self) -> usize {
        self.refs.len()
    }

    fn ensure_room(&self, bits: usize) -> Result<(), CellError> {
        if self.bit_len + bits > MAX_BITS {
            return Err(CellError::BitOverflow { bits: self.bit_len + bits });
        }
        Ok(())
    }

    fn push_bit_unchecked(&mut self, bit: bool) {
        if self.bit_len.is_multiple_of(8) {
            self.data.push(0);
        }
        if bit {
            let last = self.data.last_mut().unwrap();
            *last |= 1 << (7 - self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    pub fn store_bit(&mut self, bit: bool) -> Result<&mut Self, CellError> {
        self.ensure_room(1)?;
        self.push_bit_unchecked(bit);
        Ok(self)
    }

    pub fn store_uint(&mut self, value: u128, bits: u32) -> Result<&mut Self, CellError> {
        if bits > MAX_INT_BITS {
            return Err(CellError::WidthTooLarge(bits));
        }
        if bits < 128 && value >> bits != 0 {
            return Err(CellError::ValueOutOfRange(bits));
        }
        self.ensure_room(bits as usize)?;
        for i in (0..bits).rev() {
            self.push_bit_unchecked(value >> i & 1 == 1);
        }
        Ok(self)
    }

    /// Appends the unread bits and references of `slice`.
    pub fn store_slice(&mut self, slice: &Slice) -> Result<&mut Self, CellError> {
        self.ensure_room(slice.remaining_bits())?;
        if self.refs.len() + slice.remaining_refs() > MAX_REFS {
            return Err(CellError::RefOverflow);
        }
        for i in slice.bit_cursor()..slice.cell().bit_len() {
            self.push_bit_unchecked(slice.cell().bit(i));
        }
        self.refs.extend_from_slice(&slice.cell().refs()[slice.ref_cursor()..]);
        Ok(self)
    }

    pub fn store_ref(&mut self, cell: Cell) -> Result<&mut Self, CellError> {
        if self.refs.len() >= MAX_REFS {
            return Err(CellError::RefOverflow);
        }
        self.refs.push(cell);
        Ok(self)
    }

    pub fn build(&self) -> Cell {
        Cell::from_raw(self.data.clone(), self.bit_len, self.refs.clone())
            .expect("builder enforces cell limits")
    }
}

/// Read cursor over a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    cell: Cell,
    bit_cursor: usize,
    ref_cursor: usize,
}

impl Slice {
    pub fn new(cell: Cell) -> Slice {
        Slice { cell, bit_cursor: 0, ref_cursor: 0 }
    }

    pub fn empty() -> Slice {
        Slice::new(Cell::empty())
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn bit_cursor(&self) -> usize {
        self.bit_cursor
    }

    pub fn ref_cursor(&self) -> usize {
        self.ref_cursor
    }

    pub fn remaining_bits(&self) -> usize {
        self.cell.bit_len() - self.bit_cursor
    }

    pub fn remaining_refs(&self) -> usize {
        self.cell.refs().len() - self.ref_cursor
    }

    /// Reads the next `bits` bits as a big-endian unsigned integer.
    pub fn load_uint(&self, bits: u32) -> Result<(u128, Slice), CellError> {
        let mut rest = self.clone();
        let value = rest.read_uint(bits)?;
        Ok((value, rest))
    }

    pub fn read_uint(&mut self, bits: u32) -> Result<u128, CellError> {
        if bits > MAX_INT_BITS {
            return Err(CellError::WidthTooLarge(bits));
        }
        let n = bits as usize;
        if self.remaining_bits() < n {
            return Err(CellError::BitUnderflow { needed: n, remaining: self.remaining_bits() });
        }
        let mut value = 0u128;
        for i in 0..n {
            value = value << 1 | self.cell.bit(self.bit_cursor + i) as u128;
        }
        self.bit_cursor += n;
        Ok(value)
    }

    pub fn read_ref(&mut self) -> Result<Cell, CellError> {
        let cell = self.cell.refs().get(self.ref_cursor).cloned().ok_or(CellError::RefUnderflow)?;
        self.ref_cursor += 1;
        Ok(cell)
    }

    /// True when the unread bits and references of both slices match.
    pub fn contents_eq(&self, other: &Slice) -> bool {
        self.remaining_bits() == other.remaining_bits()
            && self.remaining_refs() == other.remaining_refs()
            && (0..self.remaining_bits())
                .all(|i| self.cell.bit(self.bit_cursor + i) == other.cell.bit(other.bit_cursor + i))
            && self.cell.refs()[self.ref_cursor..] == other.cell.refs()[other.ref_cursor..]
    }

    /// Copies the unread part into a standalone cell.
    pub fn to_cell(&self) -> Cell {
        if self.bit_cursor == 0 && self.ref_cursor == 0 {
            return self.cell.clone();
        }
        let mut b = Builder::new();
        b.store_slice(self).expect("a slice always fits in a cell");
        b.build()
    }

    /// Renders the unread part; an exhausted slice renders as `[empty]`.
    pub fn render(&self) -> String {
        if self.remaining_bits() == 0 && self.remaining_refs() == 0 {
            return "[empty]".to_string();
        }
        let mut s = format!("[{}", self.cell.render_bits(self.bit_cursor, self.cell.bit_len()));
        if self.remaining_refs() > 0 {
            s.push_str(&format!(" +{} refs", self.remaining_refs()));
        }
        s.push(']');
        s
    }
}
