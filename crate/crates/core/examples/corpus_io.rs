//! Build a small labelled corpus, write it to disk, read it back, drop
//! stopwords and frequent words, and split it.
//!
//! ```text
//! cargo run --example corpus_io
//! ```

use std::collections::HashSet;

use pfslda::corpus::{
    apply_vocab_mask, build_vocab_filter, load_corpus_dir, split_corpus, Corpus, Document,
    SplitFractions, TargetType, Vocab,
};

fn main() -> pfslda::Result<()> {
    let vocab = Vocab::new(
        ["the", "plot", "acting", "boring", "great", "film"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )?;
    let docs = vec![
        Document::from_counts([(0, 3), (1, 1), (4, 2), (5, 1)]),
        Document::from_counts([(0, 2), (2, 1), (3, 2)]),
        Document::from_counts([(0, 1), (4, 1), (5, 2)]),
        Document::from_counts([(0, 4), (3, 1), (1, 1)]),
        Document::empty(),
    ];
    let corpus = Corpus::new(
        vocab,
        docs,
        vec![1.0, 0.0, 1.0, 0.0, 1.0],
        TargetType::Binary,
    )?;

    let dir = std::env::temp_dir().join(format!("pfslda-corpus-io-{}", std::process::id()));
    corpus.save_dir(&dir)?;
    println!(
        "docs.txt:\n{}",
        std::fs::read_to_string(dir.join("docs.txt")).unwrap_or_default()
    );
    let loaded = load_corpus_dir(&dir, TargetType::Binary)?;
    assert_eq!(loaded, corpus);

    let stopwords: HashSet<String> = ["the".to_string()].into();
    let mask = build_vocab_filter(&loaded, &stopwords, 0.5, 1)?;
    let filtered = apply_vocab_mask(&loaded, &mask)?;
    println!("kept {:?}", filtered.vocab().tokens());

    let (train, val, test) = split_corpus(&filtered, SplitFractions::new(0.6, 0.2, 0.2), 0)?;
    println!(
        "split into {} / {} / {} documents, {} training tokens",
        train.len(),
        val.len(),
        test.len(),
        train.total_tokens()
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
