mod common;

use proptest::prelude::*;
use segrefine::io::{self, Palette};
use segrefine_core::{LabelMap, ProbMap, RgbImage};

#[test]
fn corrupted_files_raise_their_error() {
    let dir = tempfile::tempdir().unwrap();
    let cases = common::write_corpus(dir.path());
    assert!(cases.len() >= 6);
    for case in &cases {
        assert_eq!(case.read_code(), Some(case.code), "{}", case.name);
    }
}

#[test]
fn label_png_keeps_values_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.png");
    let labels = LabelMap::new(2, 2, 3, vec![0, 1, 2, 255]).unwrap();
    io::write_labelmap_png(&labels, &path).unwrap();
    let back = io::read_labelmap_png(&path, 3).unwrap();
    assert_eq!(back.data(), [0, 1, 2, 255]);
}

#[test]
fn rgba_alpha_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    let file = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    let mut enc = png::Encoder::new(file, 2, 1);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().unwrap();
    w.write_image_data(&[255, 0, 0, 9, 1, 2, 3, 200]).unwrap();
    w.finish().unwrap();
    assert_eq!(io::read_rgb_png(&path).unwrap().data(), [255, 0, 0, 1, 2, 3]);
}

#[test]
fn palette_csv_round_trip_and_colorize() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("palette.csv");
    let palette = Palette::builtin();
    io::write_palette(&palette, &path).unwrap();
    assert_eq!(io::read_palette(&path).unwrap(), palette);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("class_index,name,r,g,b\n0,building,70,70,70\n"));

    let labels = LabelMap::new(1, 2, 9, vec![0, 255]).unwrap();
    assert_eq!(io::colorize(&labels, &palette).unwrap().data(), [70, 70, 70, 0, 0, 0]);
    std::fs::write(&path, "class_index,name,r,g,b\n0,a,1,2,3\n2,b,1,2,3\n").unwrap();
    assert_eq!(io::read_palette(&path).unwrap_err().kind.code(), "palette");
}

fn prob_map() -> impl Strategy<Value = ProbMap> {
    (1usize..8, 1usize..8, 1usize..6).prop_flat_map(|(h, w, c)| {
        proptest::collection::vec(0.0f32..1.0, h * w * c).prop_map(move |raw| {
            let data = raw
                .chunks(c)
                .flat_map(|row| {
                    let s: f32 = row.iter().sum();
                    row.iter().map(move |v| if s > 0.0 { v / s } else { 1.0 / c as f32 }).collect::<Vec<_>>()
                })
                .collect();
            ProbMap::new(h, w, c, data).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probmap_round_trip_is_bit_exact(p in prob_map()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.spm");
        io::write_probmap(&p, &path).unwrap();
        let back = io::read_probmap(&path).unwrap();
        prop_assert_eq!((back.height(), back.width(), back.num_classes()), (p.height(), p.width(), p.num_classes()));
        let bits = |m: &ProbMap| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&p));
    }

    #[test]
    fn label_png_round_trip(
        labels in (1usize..17, 1usize..17, 1usize..10).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(prop_oneof![0..c as u8, Just(255u8)], h * w)
                .prop_map(move |d| LabelMap::new(h, w, c, d).unwrap())
        })
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        io::write_labelmap_png(&labels, &path).unwrap();
        prop_assert_eq!(io::read_labelmap_png(&path, labels.num_classes()).unwrap(), labels);
    }

    #[test]
    fn rgb_png_round_trip(img in (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<u8>(), h * w * 3).prop_map(move |d| RgbImage::new(h, w, d).unwrap())
    })) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        io::write_rgb_png(&img, &path).unwrap();
        prop_assert_eq!(io::read_rgb_png(&path).unwrap(), img);
    }
}
