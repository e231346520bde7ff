use alloc::string::String;
use alloc::vec::Vec;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Punct,
    Space,
}

fn class(c: char) -> Class {
    if c.is_alphanumeric() || c == '_' {
        Class::Word
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Punct
    }
}

/// Lowercases and splits into maximal runs of word characters
/// (alphanumerics and `_`) and maximal runs of other non-space characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_class = Class::Space;
    for c in lower.chars() {
        let k = class(c);
        if k != current_class && !current.is_empty() {
            out.push(core::mem::take(&mut current));
        }
        if k != Class::Space {
            current.push(c);
        }
        current_class = k;
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}
