use std::fs;
use std::path::Path;

use a3gn::data::{
    jitter_scale, load_image_dir, load_images, make_eval_pairs, save_image, synth_faces, write_dataset, PairingMode,
    TargetSet, SEPARATION_RATIO,
};
use a3gn::Error;
use image::{GrayImage, Luma, Rgb, RgbImage};

fn write_rgb(path: &Path, size: u32, shade: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    RgbImage::from_fn(size, size, |x, y| Rgb([shade, (x % 256) as u8, (y % 256) as u8])).save(path).unwrap();
}

#[test]
fn loads_identity_tree_resized() {
    let dir = tempfile::tempdir().unwrap();
    for (i, id) in ["bob", "alice"].iter().enumerate() {
        for k in 0..3 {
            write_rgb(&dir.path().join(id).join(format!("{k}.png")), 128, (40 * i + 10 * k) as u8);
        }
    }
    let ds = load_images(dir.path(), 112).unwrap();
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.identities, vec!["alice", "bob"]);
    assert_eq!(ds.labels(), vec![0, 0, 0, 1, 1, 1]);
    for it in &ds.items {
        assert_eq!(it.image.shape(), &[3, 112, 112]);
        assert!(it.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    // red channel is constant per file; alice image 1 has shade 50
    let red = ds.items[1].image.data()[0];
    assert!((red - (50.0 / 127.5 - 1.0)).abs() < 1e-6);
    assert_eq!(ds, load_images(dir.path(), 112).unwrap());
}

#[test]
fn grayscale_becomes_three_equal_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g").join("a.png");
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    GrayImage::from_fn(16, 16, |x, y| Luma([(x * 16 + y) as u8])).save(&p).unwrap();
    let ds = load_images(dir.path(), 16).unwrap();
    let d = ds.items[0].image.data();
    assert_eq!(&d[..256], &d[256..512]);
    assert_eq!(&d[..256], &d[512..]);
}

#[test]
fn undecodable_files_are_skipped_up_to_a_limit() {
    let dir = tempfile::tempdir().unwrap();
    for k in 0..10 {
        write_rgb(&dir.path().join("a").join(format!("{k:02}.png")), 8, 0);
    }
    fs::write(dir.path().join("a").join("zz.png"), b"not a png").unwrap();
    fs::write(dir.path().join("a").join("notes.txt"), b"ignored").unwrap();
    assert_eq!(load_images(dir.path(), 8).unwrap().len(), 10);
    fs::write(dir.path().join("a").join("zz2.jpg"), b"broken").unwrap();
    let err = load_images(dir.path(), 8).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("2 of 12"), "{err}");
}

#[test]
fn empty_or_missing_directories_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_images(dir.path(), 8), Err(Error::Config(_))));
    assert!(matches!(load_images(&dir.path().join("nope"), 8), Err(Error::Config(_))));
    fs::create_dir(dir.path().join("empty_id")).unwrap();
    assert!(matches!(load_images(dir.path(), 8), Err(Error::Config(_))));
    assert!(matches!(load_image_dir(dir.path(), 8), Err(Error::Config(_))));
}

#[test]
fn write_and_reload_round_trip() {
    let ds = synth_faces(2, 3, 4, 24).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(&ds, dir.path(), "").unwrap();
    assert_eq!(written.len(), 12);
    let back = load_images(dir.path(), 24).unwrap();
    assert_eq!(back.identities, ds.identities);
    assert_eq!(back.labels(), ds.labels());
    for (a, b) in ds.items.iter().zip(&back.items) {
        let worst = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(worst <= 1.0 / 127.5 + 1e-6, "{worst}");
    }
    let single = dir.path().join("one.png");
    save_image(&ds.items[0].image, &single).unwrap();
    assert!(single.is_file());
}

#[test]
fn synthetic_faces_counts_and_range() {
    let s = synth_faces(1, 10, 50, 32).unwrap();
    let ds = &s.dataset;
    assert_eq!(ds.len(), 500);
    assert_eq!(ds.num_identities(), 10);
    for l in 0..10 {
        assert_eq!(ds.of_identity(l).len(), 50);
    }
    for it in &ds.items {
        assert_eq!(it.image.shape(), &[3, 32, 32]);
        assert!(it.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert!(s.min_identity_distance() >= SEPARATION_RATIO * jitter_scale());
}

#[test]
fn synthetic_faces_are_seeded() {
    let a = synth_faces(7, 3, 5, 16).unwrap().dataset;
    let b = synth_faces(7, 3, 5, 16).unwrap().dataset;
    let c = synth_faces(8, 3, 5, 16).unwrap().dataset;
    assert_eq!(a, b);
    assert_ne!(a.items[0].image, c.items[0].image);
    // images of one identity differ from each other
    assert_ne!(a.items[0].image, a.items[1].image);
    assert!(matches!(synth_faces(1, 1, 5, 16), Err(Error::Config(_))));
}

#[test]
fn eval_pairs_same_and_other_image() {
    let ds = synth_faces(1, 5, 30, 16).unwrap().dataset;
    let target = TargetSet::from_dataset(&ds, 0, 7).unwrap();
    assert_eq!(target.images.len(), 7);
    assert_eq!(target.alternates.len(), 23);
    let probes = ds.filter(|l, _| l != 0).filter(|_, k| k < 25).take(100);
    let same = make_eval_pairs(&probes, &target, PairingMode::SameImage, true).unwrap();
    assert_eq!(same.len(), 100);
    assert!(same.iter().all(|p| p.target == target.images[0] && p.probe_label != 0));
    let other = make_eval_pairs(&probes, &target, PairingMode::OtherImage, true).unwrap();
    assert_eq!(other.len(), 100);
    assert!(other.iter().all(|p| p.target == target.alternates[0]));
    assert!(target.images.iter().all(|im| *im != target.alternates[0]));
    assert_eq!(same, make_eval_pairs(&probes, &target, PairingMode::SameImage, true).unwrap());
    assert_eq!(same.iter().map(|p| p.probe_index).collect::<Vec<_>>(), (0..100).collect::<Vec<_>>());
}

#[test]
fn eval_pairs_exclusion_and_errors() {
    let ds = synth_faces(1, 3, 4, 16).unwrap().dataset;
    let target = TargetSet::from_dataset(&ds, 1, 2).unwrap();
    let kept = make_eval_pairs(&ds, &target, PairingMode::SameImage, true).unwrap();
    assert_eq!(kept.len(), 8);
    assert!(kept.iter().all(|p| p.probe_label != 1));
    assert_eq!(make_eval_pairs(&ds, &target, PairingMode::SameImage, false).unwrap().len(), 12);
    let only_target = ds.filter(|l, _| l == 1);
    assert!(matches!(make_eval_pairs(&only_target, &target, PairingMode::SameImage, true), Err(Error::Config(_))));
    let empty = ds.filter(|_, _| false);
    assert!(matches!(make_eval_pairs(&empty, &target, PairingMode::SameImage, false), Err(Error::Config(_))));
    let no_alt = TargetSet::from_dataset(&ds, 1, 4).unwrap();
    assert!(matches!(make_eval_pairs(&ds, &no_alt, PairingMode::OtherImage, true), Err(Error::Config(_))));
}
