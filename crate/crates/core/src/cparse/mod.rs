//! Lightweight C front end: tokens, file-scope declarations, and body
//! analyses (call order, branch edges).

pub mod body;
pub mod lexer;
pub mod parser;

pub use body::{calls_in_order, count_branch_edges, CallSite};
pub use lexer::{lex, Token};
pub use parser::{parse_source, FunctionDecl, ParseOptions, ParsedFile, TypedefDecl, TypedefTarget};
