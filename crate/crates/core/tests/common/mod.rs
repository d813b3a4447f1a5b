#![allow(dead_code)]

use pfslda::corpus::Corpus;
pub use pfslda::verify::{TinyInstance as Instance, TinyShape};

pub fn tiny_instance(seed: u64, shape: &TinyShape) -> Instance {
    pfslda::verify::tiny_instance(seed, shape).unwrap()
}

pub fn all_docs(corpus: &Corpus) -> Vec<usize> {
    (0..corpus.len()).collect()
}
