use std::path::Path;

use byteorder::{BigEndian, ByteOrder};

use super::{digest, pixel, read_file, to_byte, write_file, DataError, Dataset, Provenance, NORMALIZATION};
use crate::tensorcore::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, DataError> {
    let head = 4 * (1 + dims);
    if bytes.len() < 4 {
        return Err(DataError::Truncated { path: path.into(), expected: head, actual: bytes.len() });
    }
    let found = BigEndian::read_u32(&bytes[..4]);
    if found != magic {
        return Err(DataError::BadMagic { path: path.into(), expected: magic, found });
    }
    if bytes.len() < head {
        return Err(DataError::Truncated { path: path.into(), expected: head, actual: bytes.len() });
    }
    let extents: Vec<usize> = (0..dims).map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..]) as usize).collect();
    let expected = head + extents.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated { path: path.into(), expected, actual: bytes.len() });
    }
    Ok(extents)
}

/// Reads an IDX image file (`u8`, 3 dims) and its label file (`u8`, 1 dim).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;
    let dims = header(images_path, &img, IMAGES_MAGIC, 3)?;
    let ldims = header(labels_path, &lab, LABELS_MAGIC, 1)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if n != ldims[0] {
        return Err(DataError::CountMismatch { images: n, labels: ldims[0] });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(DataError::InvalidArgument(format!("{}: empty image set", images_path.display())));
    }
    let data: Vec<f32> = img[16..16 + n * h * w].iter().map(|&b| pixel(b)).collect();
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        images: Tensor::new(&[n, 1, h, w], data).expect("extents match header"),
        labels,
        num_classes,
        class_names: None,
        provenance: Provenance {
            source: "idx".into(),
            files: vec![digest(images_path, &img), digest(labels_path, &lab)],
            normalization: NORMALIZATION.into(),
        },
    })
}

/// Writes a single-channel dataset back to IDX bytes.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
    let [c, h, w] = dataset.sample_shape();
    if c != 1 {
        return Err(DataError::InvalidArgument(format!("IDX images are single-channel, dataset has {c}")));
    }
    if dataset.labels.iter().any(|&l| l > 255) {
        return Err(DataError::InvalidArgument("IDX labels must fit in one byte".into()));
    }
    let n = dataset.len();
    let mut img = vec![0u8; 16];
    BigEndian::write_u32(&mut img[0..], IMAGES_MAGIC);
    BigEndian::write_u32(&mut img[4..], n as u32);
    BigEndian::write_u32(&mut img[8..], h as u32);
    BigEndian::write_u32(&mut img[12..], w as u32);
    img.extend(dataset.images.data().iter().map(|&v| to_byte(v)));
    let mut lab = vec![0u8; 8];
    BigEndian::write_u32(&mut lab[0..], LABELS_MAGIC);
    BigEndian::write_u32(&mut lab[4..], n as u32);
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    write_file(images_path, &img)?;
    write_file(labels_path, &lab)
}
