//! Sharded nearest-neighbour index over orientation-expanded embeddings.

mod entry;
mod format;
mod hash;
mod kd;
mod shard;
mod stats;
pub mod synthetic;

pub use entry::{brute_force_knn, EntryStore, Hit, IndexEntry};
pub use format::{
    decode, encode, file_size, header_size, load_db, load_db_for, read_db_file, read_db_header,
    record_size, save_db, write_db_file, FORMAT_VERSION, MAGIC, RECORD_META_BYTES,
};
pub use hash::{HashIndex, DEFAULT_HASH_BITS, DEFAULT_PROBE_RADIUS};
pub use kd::{KdTree, DEFAULT_LEAF_TARGET, DEFAULT_MAX_DEPTH};
pub use shard::{
    build_shards, DbHeader, IndexParams, Shard, ShardInfo, ShardKind, ShardSet,
    DEFAULT_DENSITY_THRESHOLD,
};
pub use stats::{storage_stats, StorageReport};
