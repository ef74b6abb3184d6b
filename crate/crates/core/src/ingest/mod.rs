//! Parsers that turn external data into canonical records.

mod canonical;
mod stackexchange;

pub use canonical::{parse_canonical, read_dataset, write_canonical, write_dataset};
pub use stackexchange::{parse_stackexchange, split_tags, PostType, RawPost, SeStats};
