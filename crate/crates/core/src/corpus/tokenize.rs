use super::Token;

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Whitespace tokenizer that peels leading and trailing punctuation off each
/// chunk, one character per token. Punctuation between alphanumerics
/// (hyphens, apostrophes, colons in times) stays inside the word.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start, i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(start) = chunk_start {
        split_chunk(text, start, text.len(), &mut tokens);
    }
    tokens
}

fn push(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    out.push(Token {
        text: text[start..end].to_string(),
        char_start: start,
        char_end: end,
    });
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chars: Vec<(usize, char)> = text[start..end].char_indices().map(|(i, c)| (start + i, c)).collect();
    let char_end = |k: usize| chars[k].0 + chars[k].1.len_utf8();

    let Some(first) = chars.iter().position(|&(_, c)| !is_punct(c)) else {
        for k in 0..chars.len() {
            push(text, chars[k].0, char_end(k), out);
        }
        return;
    };
    let last = chars.iter().rposition(|&(_, c)| !is_punct(c)).unwrap_or(first);

    for k in 0..first {
        push(text, chars[k].0, char_end(k), out);
    }
    push(text, chars[first].0, char_end(last), out);
    for k in last + 1..chars.len() {
        push(text, chars[k].0, char_end(k), out);
    }
}
