pub mod corpus;
pub mod retrieval;
pub mod tagger;
