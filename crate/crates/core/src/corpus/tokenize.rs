/// Splits sentence text into word-level tokens.
///
/// Implementations must be pure: the same text always yields the same tokens,
/// and no token may be empty or contain whitespace.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn name(&self) -> &'static str;
}

/// Lowercases, splits on whitespace and detaches every punctuation character
/// into its own token.
///
/// Anything that is neither alphanumeric nor whitespace counts as punctuation,
/// so `"don't"` becomes `["don", "'", "t"]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasicTokenizer;

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut word = String::new();
        for ch in text.chars() {
            if ch.is_whitespace() || ch.is_control() {
                flush(&mut word, &mut tokens);
            } else if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                flush(&mut word, &mut tokens);
                tokens.push(ch.to_string());
            }
        }
        flush(&mut word, &mut tokens);
        tokens
    }

    fn name(&self) -> &'static str {
        "basic"
    }
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    BasicTokenizer.tokenize(text)
}

/// Joins tokens with single spaces. Original spacing is not recoverable.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}
