//! Writes a bag file, reads it back and shows how damaged files are
//! reported.

use dscenet::data::{read_bag, write_bag, FeatureBag};
use dscenet::numerics::Matrix;
use dscenet::subtype::Subtype;

fn main() -> dscenet::Result<()> {
    let bag = FeatureBag {
        case_id: "case_0001".into(),
        features: Matrix::new(3, 4, (0..12).map(|i| i as f64 / 3.0).collect())?,
        clinical: vec![1.0, 57.0, 151.2, 0.0],
        label: Subtype::Et,
    };
    let dir = std::env::temp_dir().join("dscenet-bag-example");
    std::fs::create_dir_all(&dir).map_err(|e| dscenet::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("case_0001.dscb");
    write_bag(&path, &bag)?;
    let back = read_bag(&path)?;
    println!("round trip equal at f32 precision: {}", back == bag.narrowed());

    let bytes = bag.to_bytes()?;
    println!("{} bytes; header words {:?}", bytes.len(), header_words(&bytes));

    let truncated = &bytes[..bytes.len() - 7];
    println!("truncated: {}", FeatureBag::from_bytes(truncated).unwrap_err());

    let mut reshaped = bytes.clone();
    reshaped[8..12].copy_from_slice(&5u32.to_le_bytes());
    println!("wrong N:   {}", FeatureBag::from_bytes(&reshaped).unwrap_err());

    let mut magic = bytes;
    magic[..4].copy_from_slice(b"NOPE");
    println!("bad magic: {}", FeatureBag::from_bytes(&magic).unwrap_err());
    Ok(())
}

fn header_words(bytes: &[u8]) -> Vec<u32> {
    bytes[4..24]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
