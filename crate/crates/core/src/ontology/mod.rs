//! Concept taxonomy, triple view of directory entries and the query engine.

mod sparql;
mod taxonomy;
mod triples;

pub use sparql::{
    evaluate, parse_query, Binding, Filter, QueryError, QueryTerm, SelectQuery, TriplePattern,
};
pub use taxonomy::{load_taxonomy, Taxonomy, TaxonomyError};
pub use triples::{pred, service_triples, thing_triples, to_triples, Term, Triple, UnregisteredDescription};
