//! Analyses over the token stream of a function body.

use super::lexer::Token;
use super::parser::{matching, NON_CALL_KEYWORDS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub name: String,
    pub line: u32,
}

/// Call expressions in evaluation order: arguments complete before the call
/// that consumes them, otherwise textual order. Both arms of a branch and a
/// loop body contribute once, in the order they appear.
pub fn calls_in_order(tokens: &[Token]) -> Vec<CallSite> {
    let mut out = Vec::new();
    let mut stack: Vec<Option<CallSite>> = Vec::new();
    for (k, t) in tokens.iter().enumerate() {
        if t.is("(") {
            let callee = k
                .checked_sub(1)
                .map(|p| &tokens[p])
                .filter(|p| p.is_ident() && !NON_CALL_KEYWORDS.contains(&p.text.as_str()))
                .filter(|_| {
                    // member calls through struct fields are not API calls
                    k < 2 || !(tokens[k - 2].is(".") || tokens[k - 2].is("->"))
                })
                .map(|p| CallSite { name: p.text.clone(), line: p.line });
            stack.push(callee);
        } else if t.is(")") {
            if let Some(Some(call)) = stack.pop() {
                out.push(call);
            }
        }
    }
    // unbalanced input: flush whatever is left, innermost first
    while let Some(top) = stack.pop() {
        if let Some(call) = top {
            out.push(call);
        }
    }
    out
}

/// Static count of conditional edges: `if`, loops, `?:`, `&&` and `||` each
/// contribute two; a `switch` contributes one per label plus one for the
/// implicit fall-out when it has no `default`.
pub fn count_branch_edges(tokens: &[Token]) -> u32 {
    let mut edges = 0;
    let mut k = 0;
    while k < tokens.len() {
        let t = &tokens[k];
        match t.text.as_str() {
            "if" | "while" | "for" | "?" | "&&" | "||" => {
                edges += 2;
            }
            "switch" => edges += switch_edges(tokens, k),
            _ => {}
        }
        k += 1;
    }
    edges
}

fn switch_edges(tokens: &[Token], at: usize) -> u32 {
    // switch ( ... ) { ... }
    let Some(open_paren) = tokens[at..].iter().position(|t| t.is("(")).map(|p| p + at) else {
        return 0;
    };
    let close_paren = matching(tokens, open_paren, "(", ")");
    let Some(open) = tokens.get(close_paren + 1).filter(|t| t.is("{")).map(|_| close_paren + 1)
    else {
        return 0;
    };
    let close = matching(tokens, open, "{", "}").min(tokens.len());
    let mut labels = 0;
    let mut has_default = false;
    let mut k = open + 1;
    while k < close {
        let t = &tokens[k];
        if t.is("switch") {
            // nested switch labels belong to the nested switch
            if let Some(p) = tokens[k..close].iter().position(|x| x.is("(")) {
                let cp = matching(tokens, k + p, "(", ")");
                if tokens.get(cp + 1).is_some_and(|x| x.is("{")) {
                    k = matching(tokens, cp + 1, "{", "}") + 1;
                    continue;
                }
            }
        } else if t.is("case") {
            labels += 1;
        } else if t.is("default") && tokens.get(k + 1).is_some_and(|x| x.is(":")) {
            labels += 1;
            has_default = true;
        }
        k += 1;
    }
    labels + u32::from(!has_default)
}
