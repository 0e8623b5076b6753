use crate::ndcore::{Real, Tensor};
use crate::textpipe::{END_ID, START_ID};
use crate::transformer::CaptionModel;
use crate::{Error, Result};

/// Index of the largest value; ties go to the lowest index and NaN never wins.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] || row[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

fn as_batch_of_one<T: Real>(features: &Tensor<T>) -> Result<std::borrow::Cow<'_, Tensor<T>>> {
    match features.shape() {
        [_, _] => Ok(std::borrow::Cow::Owned(
            features.reshape(&[1, features.shape()[0], features.shape()[1]])?,
        )),
        [1, _, _] => Ok(std::borrow::Cow::Borrowed(features)),
        s => Err(Error::Shape {
            op: "greedy_decode",
            lhs: s.to_vec(),
            rhs: vec![1, 0, 0],
        }),
    }
}

/// Greedy caption for one feature grid (`[feat_len, feat_dim]` or
/// `[1, feat_len, feat_dim]`). Returns ids without `<start>` and `<end>`;
/// at most `max_len - 1` of them.
pub fn greedy_decode<T: Real>(model: &CaptionModel<T>, features: &Tensor<T>, max_len: usize) -> Result<Vec<u32>> {
    let seq_len = model.config().seq_len;
    if max_len == 0 || max_len > seq_len {
        return Err(Error::contract(format!(
            "max_len {max_len} must be in 1..={seq_len}"
        )));
    }
    let memory = model.encode(&*as_batch_of_one(features)?)?;
    let vocab = model.config().vocab_size;
    let mut tokens = vec![START_ID as usize];
    while tokens.len() < max_len {
        let logits = model.decode_logits(&tokens, 1, &memory)?;
        let last = &logits.data()[(tokens.len() - 1) * vocab..tokens.len() * vocab];
        let next = argmax(last);
        if next == END_ID as usize {
            break;
        }
        tokens.push(next);
    }
    Ok(tokens[1..].iter().map(|&t| t as u32).collect())
}
