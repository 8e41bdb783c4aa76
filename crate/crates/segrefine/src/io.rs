//! On-disk formats: SPM1 probability maps, 8-bit label PNGs, RGB PNGs and
//! CSV palettes.
//!
//! SPM1 layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 0..4 | magic `SPM1` |
//! | 4..8 | version, `u32` = 1 |
//! | 8..20 | height, width, num_classes as `u32` |
//! | 20.. | `height * width * num_classes` `f32` values, row-major `(row, col, class)` |
//!
//! There is no padding and no checksum.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use segrefine_core::{LabelMap, ProbMap, RgbImage, IGNORE_LABEL};
use serde::{Deserialize, Serialize};

pub const SPM1_MAGIC: &[u8; 4] = b"SPM1";
pub const SPM1_VERSION: u32 = 1;
const SPM1_HEADER_LEN: usize = 20;
/// Largest element count an SPM1 file may declare.
pub const SPM1_MAX_ELEMENTS: u128 = 1 << 31;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"SPM1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SPM1 version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(u64),
    #[error("declared size {height}x{width}x{classes} exceeds 2^31 elements")]
    DimensionOverflow { height: u32, width: u32, classes: u32 },
    #[error(transparent)]
    Content(#[from] segrefine_core::Error),
    #[error("png: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("expected an 8-bit {expected} PNG, found {color:?} at {depth} bits")]
    PngFormat { expected: &'static str, color: png::ColorType, depth: u8 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("class {0} has no palette entry")]
    MissingPaletteEntry(u8),
}

impl FormatError {
    /// Short stable identifier, used in CLI error summaries.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io(_) => "io",
            FormatError::BadMagic(_) => "bad-magic",
            FormatError::UnsupportedVersion(_) => "unsupported-version",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingBytes(_) => "trailing-bytes",
            FormatError::DimensionOverflow { .. } => "dimension-overflow",
            FormatError::Content(segrefine_core::Error::RowSum { .. }) => "row-sum",
            FormatError::Content(segrefine_core::Error::LabelOutOfRange { .. }) => "label-out-of-range",
            FormatError::Content(_) => "invalid-content",
            FormatError::PngDecode(_) | FormatError::PngEncode(_) => "png",
            FormatError::PngFormat { .. } => "png-format",
            FormatError::Csv(_) | FormatError::Palette(_) => "palette",
            FormatError::MissingPaletteEntry(_) => "missing-palette-entry",
        }
    }
}

/// A [`FormatError`] tied to the file it came from.
#[derive(Debug, thiserror::Error)]
#[error("{}: {kind}", path.display())]
pub struct IoError {
    pub path: PathBuf,
    pub kind: FormatError,
}

impl IoError {
    fn at(path: &Path) -> impl FnOnce(FormatError) -> IoError + '_ {
        move |kind| IoError { path: path.to_path_buf(), kind }
    }
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn wrap<T, E: Into<FormatError>>(path: &Path, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| IoError::at(path)(e.into()))
}

pub fn encode_probmap(probs: &ProbMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(SPM1_HEADER_LEN + probs.data().len() * 4);
    out.extend_from_slice(SPM1_MAGIC);
    out.extend_from_slice(&SPM1_VERSION.to_le_bytes());
    for dim in [probs.height(), probs.width(), probs.num_classes()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in probs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_probmap(bytes: &[u8]) -> Result<ProbMap, FormatError> {
    let found = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(FormatError::Truncated { expected: SPM1_HEADER_LEN as u64, found });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != SPM1_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < SPM1_HEADER_LEN {
        return Err(FormatError::Truncated { expected: SPM1_HEADER_LEN as u64, found });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != SPM1_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (height, width, classes) = (word(8), word(12), word(16));
    let elements = u128::from(height) * u128::from(width) * u128::from(classes);
    if elements > SPM1_MAX_ELEMENTS {
        return Err(FormatError::DimensionOverflow { height, width, classes });
    }
    let expected = SPM1_HEADER_LEN as u64 + 4 * elements as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FormatError::TrailingBytes(found - expected));
    }
    let data = bytes[SPM1_HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ProbMap::new(height as usize, width as usize, classes as usize, data)?)
}

pub fn read_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let bytes = wrap(path, std::fs::read(path))?;
    decode_probmap(&bytes).map_err(IoError::at(path))
}

pub fn write_probmap(probs: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    wrap(path, std::fs::write(path, encode_probmap(probs)))
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = wrap(path, File::create(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = wrap(path, encoder.write_header())?;
    wrap(path, writer.write_image_data(data))?;
    wrap(path, writer.finish())
}

/// Decodes a PNG without colour transformations; returns the header info and
/// tightly packed rows.
fn read_png(path: &Path) -> Result<(png::ColorType, png::BitDepth, usize, usize, Vec<u8>)> {
    let file = wrap(path, File::open(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = wrap(path, decoder.read_info())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::at(path)(std::io::Error::other("png too large to decode").into()))?;
    let mut buf = vec![0; size];
    let info = wrap(path, reader.next_frame(&mut buf))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let packed = info.line_size * h;
    buf.truncate(packed);
    Ok((info.color_type, info.bit_depth, w, h, buf))
}

/// Reads an 8-bit grayscale PNG whose pixel values are class indices (255 = ignore).
pub fn read_labelmap_png(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let (color, depth, w, h, data) = read_png(path)?;
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(IoError::at(path)(FormatError::PngFormat { expected: "grayscale", color, depth: depth as u8 }));
    }
    wrap(path, LabelMap::new(h, w, num_classes, data))
}

pub fn write_labelmap_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_png(path.as_ref(), labels.width(), labels.height(), png::ColorType::Grayscale, labels.data())
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let (color, depth, w, h, data) = read_png(path)?;
    let bad = || IoError::at(path)(FormatError::PngFormat { expected: "RGB or RGBA", color, depth: depth as u8 });
    if depth != png::BitDepth::Eight {
        return Err(bad());
    }
    let rgb = match color {
        png::ColorType::Rgb => data,
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        _ => return Err(bad()),
    };
    wrap(path, RgbImage::new(h, w, rgb))
}

pub fn write_rgb_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_png(path.as_ref(), image.width(), image.height(), png::ColorType::Rgb, image.data())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub class_index: usize,
    pub name: String,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

/// Class names and display colours, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    /// Entries may come in any order; indices must cover `0..n` exactly once
    /// and names must be unique and non-empty.
    pub fn new(mut entries: Vec<PaletteEntry>) -> Result<Self, FormatError> {
        entries.sort_by_key(|e| e.class_index);
        if entries.is_empty() || entries.len() > segrefine_core::maps::MAX_CLASSES {
            return Err(FormatError::Palette(format!(
                "needs 1..={} entries, got {}",
                segrefine_core::maps::MAX_CLASSES,
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.class_index != i {
                return Err(FormatError::Palette(format!(
                    "class indices must be unique and contiguous from 0; missing {i}"
                )));
            }
            if e.name.trim().is_empty() {
                return Err(FormatError::Palette(format!("class {i} has an empty name")));
            }
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(FormatError::Palette(format!("duplicate class name {:?}", e.name)));
            }
        }
        Ok(Self { entries })
    }

    /// Default nine-class outdoor palette.
    pub fn builtin() -> Self {
        const CLASSES: [(&str, [u8; 3]); 9] = [
            ("building", [70, 70, 70]),
            ("structure", [190, 153, 153]),
            ("road", [128, 64, 128]),
            ("sky", [70, 130, 180]),
            ("stone", [150, 100, 100]),
            ("t.-grass", [152, 251, 152]),
            ("t.-other", [145, 170, 100]),
            ("t.-snow", [235, 235, 245]),
            ("tree", [107, 142, 35]),
        ];
        Self::new(
            CLASSES
                .iter()
                .enumerate()
                .map(|(i, (name, [r, g, b]))| PaletteEntry {
                    class_index: i,
                    name: (*name).into(),
                    r: *r,
                    g: *g,
                    b: *b,
                })
                .collect(),
        )
        .expect("built-in palette is valid")
    }

    /// `class_0`, `class_1`, ... with evenly spread hues.
    pub fn generic(num_classes: usize) -> Result<Self, FormatError> {
        Self::new(
            (0..num_classes)
                .map(|i| {
                    let h = i as f64 / num_classes.max(1) as f64 * 6.0;
                    let x = (1.0 - (h % 2.0 - 1.0).abs()) * 200.0;
                    let [r, g, b] = match h as u32 {
                        0 => [200.0, x, 0.0],
                        1 => [x, 200.0, 0.0],
                        2 => [0.0, 200.0, x],
                        3 => [0.0, x, 200.0],
                        4 => [x, 0.0, 200.0],
                        _ => [200.0, 0.0, x],
                    }
                    .map(|v: f64| v as u8 + 40);
                    PaletteEntry { class_index: i, name: format!("class_{i}"), r, g, b }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.entries.get(usize::from(class)).map(|e| [e.r, e.g, e.b])
    }
}

/// Reads a palette CSV with header `class_index,name,r,g,b`.
pub fn read_palette(path: impl AsRef<Path>) -> Result<Palette> {
    let path = path.as_ref();
    let mut reader = wrap(path, csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path))?;
    let entries = wrap(path, reader.deserialize().collect::<Result<Vec<PaletteEntry>, _>>())?;
    wrap(path, Palette::new(entries))
}

pub fn write_palette(palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = wrap(path, csv::Writer::from_path(path))?;
    for e in palette.entries() {
        wrap(path, writer.serialize(e))?;
    }
    wrap(path, writer.flush())
}

/// Maps each label to its palette colour; ignore pixels render black.
pub fn colorize(labels: &LabelMap, palette: &Palette) -> Result<RgbImage, FormatError> {
    let mut data = Vec::with_capacity(labels.len() * 3);
    for &l in labels.data() {
        if l == IGNORE_LABEL {
            data.extend_from_slice(&[0, 0, 0]);
        } else {
            data.extend_from_slice(&palette.color(l).ok_or(FormatError::MissingPaletteEntry(l))?);
        }
    }
    Ok(RgbImage::new(labels.height(), labels.width(), data)?)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        wrap(path, std::fs::create_dir_all(parent))?;
    }
    let mut f = wrap(path, File::create(path))?;
    wrap(path, f.write_all(contents.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs() -> ProbMap {
        ProbMap::new(1, 2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn spm1_layout() {
        let bytes = encode_probmap(&probs());
        assert_eq!(&bytes[..4], b"SPM1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &0.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(decode_probmap(&bytes).unwrap(), probs());
    }

    #[test]
    fn spm1_error_codes() {
        let good = encode_probmap(&probs());
        let mut magic = good.clone();
        magic[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_probmap(&magic).unwrap_err().code(), "bad-magic");
        let mut version = good.clone();
        version[4] = 2;
        assert_eq!(decode_probmap(&version).unwrap_err().code(), "unsupported-version");
        assert_eq!(decode_probmap(&good[..10]).unwrap_err().code(), "truncated");
        assert_eq!(decode_probmap(&good[..30]).unwrap_err().code(), "truncated");
        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(decode_probmap(&extra).unwrap_err().code(), "trailing-bytes");
    }

    #[test]
    fn palette_rules() {
        let p = Palette::builtin();
        assert_eq!(p.len(), 9);
        assert_eq!(p.names()[5], "t.-grass");
        let e = |i, n: &str| PaletteEntry { class_index: i, name: n.into(), r: 0, g: 0, b: 0 };
        assert!(Palette::new(vec![e(0, "a"), e(2, "b")]).is_err());
        assert!(Palette::new(vec![e(0, "a"), e(1, "a")]).is_err());
        assert!(Palette::new(vec![e(0, " ")]).is_err());
        assert!(Palette::new(vec![e(1, "b"), e(0, "a")]).is_ok());
        assert_eq!(Palette::generic(12).unwrap().len(), 12);
    }

    #[test]
    fn colorize_lookup_and_sentinel() {
        let mut p = Palette::builtin();
        let labels = LabelMap::filled(2, 2, 9, 0).unwrap();
        assert_eq!(colorize(&labels, &p).unwrap().data(), &[70u8; 12]);
        let ignore = LabelMap::filled(2, 2, 9, IGNORE_LABEL).unwrap();
        assert_eq!(colorize(&ignore, &p).unwrap().data(), &[0u8; 12]);
        p = Palette::generic(2).unwrap();
        let err = colorize(&LabelMap::new(1, 1, 9, vec![7]).unwrap(), &p).unwrap_err();
        assert!(err.to_string().contains("class 7"));
    }
}
