//! Token matrices with patch-grid coordinates, and the `TOPV` dump format.
//!
//! Tokens are stored row-major in double precision. Each row carries the
//! `(x, y)` index of the image patch it came from. When coordinates are
//! generated automatically the flattening is row-major from the top-left
//! patch with `x` varying fastest: token `i` sits at
//! `(i % grid_w, i / grid_w)`.
//!
//! # Dump layout
//!
//! All integers are little-endian `u32`.
//!
//! | offset | field          | value                              |
//! |--------|----------------|------------------------------------|
//! | 0      | magic          | `b"TOPV"`                          |
//! | 4      | version        | `1`                                |
//! | 8      | n_tokens       | `N`                                |
//! | 12     | dim            | `d`                                |
//! | 16     | grid_h         |                                    |
//! | 20     | grid_w         |                                    |
//! | 24     | payload_kind   | `0` source only, `1` source+target |
//! | 28     | payload        | `(1 or 2) * N * d` LE `f32`        |

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const DUMP_MAGIC: [u8; 4] = *b"TOPV";
pub const DUMP_VERSION: u32 = 1;
pub const DUMP_HEADER_LEN: usize = 28;

/// `N x d` token features plus one grid coordinate per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    data: Array2<f64>,
    grid_h: usize,
    grid_w: usize,
    coords: Vec<(usize, usize)>,
}

impl TokenSet {
    /// Builds a token set whose coordinates are generated row-major over a
    /// `grid_h x grid_w` grid. Requires `N == grid_h * grid_w`.
    pub fn new(data: Array2<f64>, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Shape(format!("grid must be non-empty, got {grid_h}x{grid_w}")));
        }
        let n = data.nrows();
        if n != grid_h * grid_w {
            return Err(Error::Shape(format!(
                "{n} tokens do not fill a {grid_h}x{grid_w} grid"
            )));
        }
        let coords = (0..n).map(|i| (i % grid_w, i / grid_w)).collect();
        Self::checked(data, grid_h, grid_w, coords)
    }

    /// Builds a token set with caller-supplied coordinates.
    pub fn with_coords(
        data: Array2<f64>,
        grid_h: usize,
        grid_w: usize,
        coords: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Shape(format!("grid must be non-empty, got {grid_h}x{grid_w}")));
        }
        if coords.len() != data.nrows() {
            return Err(Error::Contract(format!(
                "{} coordinates supplied for {} tokens",
                coords.len(),
                data.nrows()
            )));
        }
        if let Some(&(x, y)) = coords.iter().find(|&&(x, y)| x >= grid_w || y >= grid_h) {
            return Err(Error::Contract(format!(
                "coordinate ({x}, {y}) outside {grid_h}x{grid_w} grid"
            )));
        }
        Self::checked(data, grid_h, grid_w, coords)
    }

    fn checked(
        data: Array2<f64>,
        grid_h: usize,
        grid_w: usize,
        coords: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape("token matrix must have at least one row and column".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at token {}, column {}",
                pos / data.ncols(),
                pos % data.ncols()
            )));
        }
        Ok(Self { data, grid_h, grid_w, coords })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Same grid and coordinates, new features. Used by the layer simulator.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "replacement has {} rows, expected {}",
                data.nrows(),
                self.len()
            )));
        }
        Self::checked(data, self.grid_h, self.grid_w, self.coords.clone())
    }

    fn same_shape(&self, other: &TokenSet) -> bool {
        self.len() == other.len()
            && self.dim() == other.dim()
            && self.grid_h == other.grid_h
            && self.grid_w == other.grid_w
    }
}

/// Parsed fixed-size dump header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenDumpHeader {
    pub n_tokens: u32,
    pub dim: u32,
    pub grid_h: u32,
    pub grid_w: u32,
    pub payload_kind: u32,
}

impl TokenDumpHeader {
    pub fn payload_len(&self) -> usize {
        let sets = if self.payload_kind == 1 { 2 } else { 1 };
        sets * self.n_tokens as usize * self.dim as usize * 4
    }

    pub fn to_bytes(&self) -> [u8; DUMP_HEADER_LEN] {
        let mut out = [0u8; DUMP_HEADER_LEN];
        out[0..4].copy_from_slice(&DUMP_MAGIC);
        let fields = [DUMP_VERSION, self.n_tokens, self.dim, self.grid_h, self.grid_w, self.payload_kind];
        for (k, v) in fields.iter().enumerate() {
            out[4 + 4 * k..8 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DUMP_HEADER_LEN {
            return Err(Error::Format(format!(
                "header needs {DUMP_HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != DUMP_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        let version = word(0);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header = Self {
            n_tokens: word(1),
            dim: word(2),
            grid_h: word(3),
            grid_w: word(4),
            payload_kind: word(5),
        };
        if header.payload_kind > 1 {
            return Err(Error::Format(format!("unknown payload kind {}", header.payload_kind)));
        }
        Ok(header)
    }
}

/// Decodes a dump held in memory.
pub fn decode_dump(bytes: &[u8]) -> Result<(TokenSet, Option<TokenSet>)> {
    let header = TokenDumpHeader::parse(bytes)?;
    let payload = &bytes[DUMP_HEADER_LEN..];
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(Error::Length { expected, actual: payload.len() });
    }
    let n = header.n_tokens as usize;
    let d = header.dim as usize;
    let (grid_h, grid_w) = (header.grid_h as usize, header.grid_w as usize);

    let read_set = |chunk: &[u8]| -> Result<TokenSet> {
        let values: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let data = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        TokenSet::new(data, grid_h, grid_w)
    };

    let set_bytes = n * d * 4;
    let source = read_set(&payload[..set_bytes])?;
    let target = if header.payload_kind == 1 {
        Some(read_set(&payload[set_bytes..])?)
    } else {
        None
    };
    Ok((source, target))
}

/// Encodes a source set and optional target set as dump bytes.
pub fn encode_dump(source: &TokenSet, target: Option<&TokenSet>) -> Result<Vec<u8>> {
    if let Some(t) = target {
        if !source.same_shape(t) {
            return Err(Error::Shape(format!(
                "target {}x{} on {}x{} grid does not match source {}x{} on {}x{} grid",
                t.len(),
                t.dim(),
                t.grid_h,
                t.grid_w,
                source.len(),
                source.dim(),
                source.grid_h,
                source.grid_w
            )));
        }
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} exceeds u32")))
    };
    let header = TokenDumpHeader {
        n_tokens: to_u32(source.len(), "token count")?,
        dim: to_u32(source.dim(), "dimension")?,
        grid_h: to_u32(source.grid_h, "grid height")?,
        grid_w: to_u32(source.grid_w, "grid width")?,
        payload_kind: u32::from(target.is_some()),
    };
    let mut out = Vec::with_capacity(DUMP_HEADER_LEN + header.payload_len());
    out.extend_from_slice(&header.to_bytes());
    for set in std::iter::once(source).chain(target) {
        for &v in set.data.iter() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Data(format!("value {v} is not representable as f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_dump(path: impl AsRef<Path>) -> Result<(TokenSet, Option<TokenSet>)> {
    let bytes = fs::read(path)?;
    decode_dump(&bytes)
}

pub fn save_dump(source: &TokenSet, target: Option<&TokenSet>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dump(source, target)?;
    fs::write(path, bytes)?;
    Ok(())
}
