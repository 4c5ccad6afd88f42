//! Inverted index over item review text, with a description fallback for
//! items that have no reviews.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::*;
use crate::corpus::{Catalogue, Corpus};
use crate::error::LexicalError;

const MAGIC: &[u8; 8] = b"RTMIDX\0\0";
const VERSION: u32 = 1;

/// Term -> postings index over the catalogue's items. An item's document is
/// the concatenation of its (train-partition) reviews; items without any
/// review text are indexed under their description tokens instead.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvertedIndex {
    /// Sorted ascending; position is the document id used in postings.
    pub items: Vec<String>,
    /// term -> (doc id, term frequency), postings sorted by doc id.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    /// Token count per document, same order as `items`.
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> u32 {
        self.doc_lengths.len() as u32
    }

    /// Build the index from a catalogue. Deterministic: items are already
    /// sorted and term maps are ordered.
    pub fn build(corpus: &Corpus, catalogue: &Catalogue) -> InvertedIndex {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = vec![0u32; catalogue.items.len()];
        for (doc, _) in catalogue.items.iter().enumerate() {
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            let mut len = 0u32;
            let review_tokens = catalogue.item_reviews[doc]
                .iter()
                .flat_map(|&idx| corpus.reviews[idx].tokens.iter());
            let mut any = false;
            for t in review_tokens {
                *counts.entry(t).or_insert(0) += 1;
                len += 1;
                any = true;
            }
            if !any {
                // description fallback
                for t in &catalogue.item_desc[doc] {
                    *counts.entry(t).or_insert(0) += 1;
                    len += 1;
                }
            }
            doc_lengths[doc] = len;
            for (term, tf) in counts {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            items: catalogue.items.clone(),
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    /// Write the self-describing binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), LexicalError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, self.items.len() as u32)?;
        write_f64(&mut w, self.avg_doc_length)?;
        for (item, &len) in self.items.iter().zip(&self.doc_lengths) {
            write_str(&mut w, item)?;
            write_u32(&mut w, len)?;
        }
        write_u32(&mut w, self.postings.len() as u32)?;
        for (term, posts) in &self.postings {
            write_str(&mut w, term)?;
            write_u32(&mut w, posts.len() as u32)?;
            for &(doc, tf) in posts {
                write_u32(&mut w, doc)?;
                write_u32(&mut w, tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<InvertedIndex, LexicalError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LexicalError::BadCheckpoint(format!(
                "bad magic {magic:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(LexicalError::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let n_items = read_u32(&mut r)? as usize;
        let avg_doc_length = read_f64(&mut r)?;
        let mut items = Vec::with_capacity(n_items);
        let mut doc_lengths = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            items.push(read_str(&mut r)?);
            doc_lengths.push(read_u32(&mut r)?);
        }
        let n_terms = read_u32(&mut r)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = read_str(&mut r)?;
            let n_posts = read_u32(&mut r)? as usize;
            let mut posts = Vec::with_capacity(n_posts);
            for _ in 0..n_posts {
                let doc = read_u32(&mut r)?;
                let tf = read_u32(&mut r)?;
                if doc as usize >= n_items {
                    return Err(LexicalError::BadCheckpoint(format!(
                        "posting references document {doc} of {n_items}"
                    )));
                }
                posts.push((doc, tf));
            }
            postings.insert(term, posts);
        }
        Ok(InvertedIndex {
            items,
            postings,
            doc_lengths,
            avg_doc_length,
        })
    }
}
