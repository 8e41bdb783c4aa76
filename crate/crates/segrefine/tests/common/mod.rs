#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use segrefine::io;

pub enum Reader {
    ProbMap,
    LabelPng { num_classes: usize },
    RgbPng,
}

pub struct CorruptCase {
    pub name: &'static str,
    pub path: PathBuf,
    pub reader: Reader,
    /// Code reported by `FormatError::code`.
    pub code: &'static str,
}

impl CorruptCase {
    /// Code of the error raised when reading the file, or `None` if it loaded.
    pub fn read_code(&self) -> Option<&'static str> {
        let r = match self.reader {
            Reader::ProbMap => io::read_probmap(&self.path).map(drop),
            Reader::LabelPng { num_classes } => io::read_labelmap_png(&self.path, num_classes).map(drop),
            Reader::RgbPng => io::read_rgb_png(&self.path).map(drop),
        };
        r.err().map(|e| {
            assert_eq!(e.path, self.path, "error must name the file");
            e.kind.code()
        })
    }
}

fn spm(h: u32, w: u32, c: u32, values: &[f32]) -> Vec<u8> {
    let mut out = b"SPM1".to_vec();
    for word in [1, h, w, c] {
        out.extend_from_slice(&u32::to_le_bytes(word));
    }
    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

fn raw_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path).unwrap()), w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().unwrap();
    writer.write_image_data(data).unwrap();
    writer.finish().unwrap();
}

/// Writes deliberately broken files into `dir`.
pub fn write_corpus(dir: &Path) -> Vec<CorruptCase> {
    let mut cases = Vec::new();
    let mut add = |name: &'static str, bytes: Option<Vec<u8>>, reader, code| {
        let path = dir.join(name);
        if let Some(b) = bytes {
            std::fs::write(&path, b).unwrap();
        }
        cases.push(CorruptCase { name, path, reader, code });
    };
    let mut bad_magic = spm(1, 1, 1, &[1.0]);
    bad_magic[..4].copy_from_slice(b"XXXX");
    add("bad_magic.spm", Some(bad_magic), Reader::ProbMap, "bad-magic");
    add("truncated.spm", Some(spm(2, 2, 3, &[1.0 / 3.0; 10])), Reader::ProbMap, "truncated");
    add("short_header.spm", Some(b"SPM1\x01\x00".to_vec()), Reader::ProbMap, "truncated");
    add("overflow.spm", Some(spm(65536, 65536, 2, &[])), Reader::ProbMap, "dimension-overflow");
    add("row_sum.spm", Some(spm(1, 2, 2, &[0.5, 0.4, 0.5, 0.5])), Reader::ProbMap, "row-sum");
    let mut version = spm(1, 1, 1, &[1.0]);
    version[4] = 2;
    add("version.spm", Some(version), Reader::ProbMap, "unsupported-version");
    add("trailing.spm", Some(spm(1, 1, 1, &[1.0, 0.0])), Reader::ProbMap, "trailing-bytes");
    add("negative.spm", Some(spm(1, 1, 2, &[1.5, -0.5])), Reader::ProbMap, "invalid-content");

    raw_png(&dir.join("rgb_label.png"), 2, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[0; 6]);
    add("rgb_label.png", None, Reader::LabelPng { num_classes: 3 }, "png-format");
    raw_png(&dir.join("out_of_range.png"), 2, 2, png::ColorType::Grayscale, png::BitDepth::Eight, &[0, 1, 7, 255]);
    add("out_of_range.png", None, Reader::LabelPng { num_classes: 3 }, "label-out-of-range");
    raw_png(&dir.join("deep.png"), 1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0; 6]);
    add("deep.png", None, Reader::RgbPng, "png-format");
    add("garbage.png", Some(b"\x89PNG\r\n\x1a\nnot really".to_vec()), Reader::RgbPng, "png");
    add("missing.png", None, Reader::RgbPng, "io");
    cases
}
