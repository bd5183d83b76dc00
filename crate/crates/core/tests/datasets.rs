use std::io::Write;
use std::path::{Path, PathBuf};

use minn_core::datasets::{load_idx, load_mnist_dir, one_hot, LabeledImageSet, Split, IMAGE_PIXELS};
use minn_core::Error;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn write_idx(dir: &Path, count: u32, label_count: u32, image_magic: u32) -> (PathBuf, PathBuf) {
    let ip = dir.join("img");
    let lp = dir.join("lab");
    let mut f = std::fs::File::create(&ip).unwrap();
    f.write_all(&image_magic.to_be_bytes()).unwrap();
    for v in [count, 28, 28] {
        f.write_all(&v.to_be_bytes()).unwrap();
    }
    f.write_all(&vec![255u8; count as usize * IMAGE_PIXELS]).unwrap();
    let mut f = std::fs::File::create(&lp).unwrap();
    f.write_all(&0x801u32.to_be_bytes()).unwrap();
    f.write_all(&label_count.to_be_bytes()).unwrap();
    f.write_all(&(0..label_count).map(|i| (i % 10) as u8).collect::<Vec<_>>()).unwrap();
    (ip, lp)
}

#[test]
fn bundled_split_loads() {
    let (train, test) = load_mnist_dir(&data_dir()).unwrap();
    assert_eq!(train.len(), 8000);
    assert_eq!(test.len(), 2000);
    for set in [&train, &test] {
        assert!(set.images().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(set.class_counts().iter().all(|&c| c > 0));
        assert_eq!(set.pixel_dim(), IMAGE_PIXELS);
    }
    assert_eq!(train.split(), Split::Train);
    let again = load_mnist_dir(&data_dir()).unwrap();
    assert_eq!(again.0, train);
}

/// Runs only when the canonical 70000-image files are supplied.
#[test]
fn canonical_files_when_available() {
    let Ok(dir) = std::env::var("MINN_MNIST_FULL_DIR") else {
        eprintln!("MINN_MNIST_FULL_DIR not set; skipping the canonical-size check");
        return;
    };
    let (train, test) = load_mnist_dir(Path::new(&dir)).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
}

#[test]
fn synthetic_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), 3, 3, 0x803);
    let set = load_idx(&ip, &lp, Split::Test).unwrap();
    assert_eq!(set.len(), 3);
    assert!(set.images().iter().all(|&p| p == 1.0));

    let (ip, lp) = write_idx(dir.path(), 3, 2, 0x803);
    assert!(matches!(load_idx(&ip, &lp, Split::Test), Err(Error::Format { .. })));

    let (ip, lp) = write_idx(dir.path(), 3, 3, 0x802);
    assert!(matches!(load_idx(&ip, &lp, Split::Test), Err(Error::Format { .. })));

    let (ip, lp) = write_idx(dir.path(), 3, 3, 0x803);
    let bytes = std::fs::read(&ip).unwrap();
    std::fs::write(&ip, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(load_idx(&ip, &lp, Split::Test), Err(Error::Format { .. })));
    std::fs::write(&ip, &bytes[..10]).unwrap();
    assert!(matches!(load_idx(&ip, &lp, Split::Test), Err(Error::Format { .. })));

    assert!(matches!(
        load_idx(&dir.path().join("nope"), &lp, Split::Test),
        Err(Error::Io { .. })
    ));
}

#[test]
fn truncated_gzip_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = data_dir().join("t10k-images-idx3-ubyte.gz");
    let bytes = std::fs::read(src).unwrap();
    let cut = dir.path().join("cut.gz");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let labels = data_dir().join("t10k-labels-idx1-ubyte.gz");
    assert!(matches!(load_idx(&cut, &labels, Split::Test), Err(Error::Format { .. })));
}

#[test]
fn subsampling() {
    let (train, _) = load_mnist_dir(&data_dir()).unwrap();
    let all = train.subsample(train.len(), 5).unwrap();
    assert_eq!(all, train);

    let s = train.subsample(1000, 11).unwrap();
    assert_eq!(s.len(), 1000);
    for c in s.class_counts() {
        assert!((c as i64 - 100).abs() <= 2, "{:?}", s.class_counts());
    }
    assert_eq!(s, train.subsample(1000, 11).unwrap());
    assert_ne!(s, train.subsample(1000, 12).unwrap());
    assert!(matches!(train.subsample(8001, 1), Err(Error::Domain(_))));

    // A class too small for its share passes the remainder on.
    let big = train.subsample(7500, 3).unwrap();
    assert_eq!(big.len(), 7500);
    assert_eq!(big.class_counts()[5], 691);
}

#[test]
fn one_hot_and_validation() {
    assert_eq!(one_hot(3), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let bad = LabeledImageSet::new(ndarray::Array2::from_elem((1, 4), 2.0), vec![0], Split::Train);
    assert!(matches!(bad, Err(Error::Domain(_))));
}
