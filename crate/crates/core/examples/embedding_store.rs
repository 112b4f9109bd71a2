// Writes a binary embedding store, reads it back and joins it with a
// manifest. Ids present on only one side are counted, not silently dropped.

use std::error::Error;

use ser_toolkit::embedding_store::{join, read_store, write_store};
use ser_toolkit::synthetic::{synthetic_manifest, synthetic_store, SyntheticOptions};
use ser_toolkit::EmbeddingStore;

pub fn run() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let opts = SyntheticOptions {
        datasets: Some(vec!["SAVEE".into()]),
        ..Default::default()
    };
    let manifest = synthetic_manifest(3, &opts);
    let full = synthetic_store(&manifest, 8, 2.0, 3);

    // Drop every tenth vector so the join has something to report.
    let mut store = EmbeddingStore::new(full.dim())?;
    for (i, (id, v)) in full.iter().enumerate() {
        if i % 10 != 0 {
            store.push(id, v)?;
        }
    }
    store.push("SAVEE/unlisted.wav", &vec![0.0; full.dim()])?;

    let path = dir.path().join("embeddings.bin");
    write_store(&store, &path)?;
    let back = read_store(&path)?;
    println!("{} vectors of dim {} in {} bytes", back.len(), back.dim(), std::fs::metadata(&path)?.len());
    assert_eq!(back, store);

    let joined = join(&manifest, &back);
    println!(
        "joined {} records; {} only in the manifest, {} only in the store",
        joined.pairs.len(),
        joined.manifest_only,
        joined.store_only
    );
    let (record, vector) = &joined.pairs[0];
    println!("{} -> {:?}", record.id, &vector[..3]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
