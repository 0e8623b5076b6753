//! Caption text handling: normalisation, vocabulary, fixed-length encoding.

mod normalize;
mod vocab;

pub use normalize::{normalize_caption, LengthFilter, Rejection, PUNCTUATION};
pub use vocab::{Vocab, END, END_ID, PAD, PAD_ID, START, START_ID, UNK, UNK_ID};

use crate::{Error, Result};

/// `<start> tokens... <end>` right-padded with `<pad>` to `seq_len`. Captions
/// longer than `seq_len - 2` tokens are truncated; `<end>` is always kept.
pub fn encode(normalized: &str, vocab: &Vocab, seq_len: usize) -> Result<Vec<u32>> {
    if seq_len < 2 {
        return Err(Error::config(format!("seq_len {seq_len} leaves no room for <start>/<end>")));
    }
    let mut ids = Vec::with_capacity(seq_len);
    ids.push(START_ID);
    ids.extend(
        normalized
            .split_whitespace()
            .take(seq_len - 2)
            .map(|t| vocab.id(t)),
    );
    ids.push(END_ID);
    ids.resize(seq_len, PAD_ID);
    Ok(ids)
}

/// Space-joined tokens up to the first `<end>`; `<start>` and `<pad>` are
/// skipped and `<unk>` is printed literally.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        let tok = vocab.token(id)?;
        match id {
            END_ID => break,
            START_ID | PAD_ID => continue,
            _ => words.push(tok),
        }
    }
    Ok(words.join(" "))
}

/// Checks the encoded-caption layout: `<start>`, exactly one `<end>`, then
/// only `<pad>`.
pub fn is_well_formed(ids: &[u32]) -> bool {
    let Some((&first, rest)) = ids.split_first() else {
        return false;
    };
    let Some(end) = rest.iter().position(|&i| i == END_ID) else {
        return false;
    };
    first == START_ID
        && rest[..end].iter().all(|&i| i != PAD_ID && i != START_ID)
        && rest[end + 1..].iter().all(|&i| i == PAD_ID)
}
