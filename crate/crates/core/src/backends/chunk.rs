//! Producer-consumer row chunking.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;

use super::BackendError;

/// Rows per chunk; a 1072-line image splits into 67 chunks.
pub const DEFAULT_CHUNK_LINES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub start_row: usize,
    pub row_count: usize,
}

/// FIFO of row bands covering `[0, height)` exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkQueue {
    chunks: Vec<Chunk>,
}

impl ChunkQueue {
    pub fn build(height: usize, chunk_lines: usize) -> Result<Self, BackendError> {
        if height == 0 || chunk_lines == 0 {
            return Err(BackendError::InvalidConfig(format!(
                "height ({height}) and chunk_lines ({chunk_lines}) must be positive"
            )));
        }
        let chunks = (0..height)
            .step_by(chunk_lines)
            .map(|start_row| Chunk {
                start_row,
                row_count: chunk_lines.min(height - start_row),
            })
            .collect();
        Ok(ChunkQueue { chunks })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Same chunks, dequeued in `order` (a permutation of chunk indices).
    pub(crate) fn reordered(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.chunks.len());
        ChunkQueue {
            chunks: order.iter().map(|&i| self.chunks[i]).collect(),
        }
    }
}

/// Drains `queue` with `n_threads` workers. Each chunk owns a disjoint slice
/// of `out`, so every row is written by exactly one worker.
pub(crate) fn run_queue<F>(
    queue: &ChunkQueue,
    width: usize,
    out: &mut [u32],
    n_threads: usize,
    row_fn: F,
) -> Result<(), BackendError>
where
    F: Fn(usize, &mut [u32]) + Sync,
{
    if n_threads == 0 {
        return Err(BackendError::InvalidConfig("n_threads must be >= 1".into()));
    }
    let covered: usize = queue.chunks.iter().map(|c| c.row_count).sum();
    assert_eq!(
        covered * width,
        out.len(),
        "chunk queue does not cover the output"
    );

    // Split the output in row order, then enqueue the slices in queue order.
    let mut by_start: Vec<Chunk> = queue.chunks.clone();
    by_start.sort_by_key(|c| c.start_row);
    let mut slices: Vec<Option<&mut [u32]>> = Vec::with_capacity(by_start.len());
    let mut rest = out;
    for c in &by_start {
        let (head, tail) = rest.split_at_mut(c.row_count * width);
        slices.push(Some(head));
        rest = tail;
    }
    let work: VecDeque<(Chunk, &mut [u32])> = queue
        .chunks
        .iter()
        .map(|c| {
            let idx = by_start
                .binary_search_by_key(&c.start_row, |b| b.start_row)
                .unwrap();
            (*c, slices[idx].take().expect("chunk listed twice"))
        })
        .collect();
    let work = Mutex::new(work);

    let worker = || loop {
        let next = work.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
        let Some((chunk, band)) = next else { break };
        for (i, row) in band.chunks_mut(width).enumerate() {
            row_fn(chunk.start_row + i, row);
        }
    };

    if n_threads == 1 {
        worker();
        return Ok(());
    }
    thread::scope(|s| {
        let mut spawn_error = None;
        for i in 0..n_threads {
            if let Err(e) = thread::Builder::new()
                .name(format!("render-{i}"))
                .spawn_scoped(s, worker)
            {
                spawn_error = Some(e);
                break;
            }
        }
        // Whatever workers did start still drain the queue; the calling
        // thread helps so the grid is complete either way.
        worker();
        match spawn_error {
            Some(e) => Err(BackendError::Resource(e.to_string())),
            None => Ok(()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_chunking() {
        let q = ChunkQueue::build(1072, 16).unwrap();
        assert_eq!(q.len(), 67);
        assert!(q.chunks().iter().all(|c| c.row_count == 16));
    }

    #[test]
    fn short_and_ragged() {
        assert_eq!(
            ChunkQueue::build(10, 16).unwrap().chunks(),
            &[Chunk {
                start_row: 0,
                row_count: 10
            }]
        );
        assert_eq!(
            ChunkQueue::build(33, 16).unwrap().chunks(),
            &[
                Chunk {
                    start_row: 0,
                    row_count: 16
                },
                Chunk {
                    start_row: 16,
                    row_count: 16
                },
                Chunk {
                    start_row: 32,
                    row_count: 1
                },
            ]
        );
    }

    #[test]
    fn zero_inputs_rejected() {
        assert!(ChunkQueue::build(0, 16).is_err());
        assert!(ChunkQueue::build(16, 0).is_err());
    }

    #[test]
    fn each_row_written_once() {
        let q = ChunkQueue::build(37, 5).unwrap();
        let mut out = vec![0u32; 37 * 3];
        run_queue(&q, 3, &mut out, 4, |row, line| {
            for v in line.iter_mut() {
                *v += row as u32 + 1;
            }
        })
        .unwrap();
        for (row, line) in out.chunks(3).enumerate() {
            assert!(line.iter().all(|&v| v == row as u32 + 1));
        }
    }

    proptest::proptest! {
        #[test]
        fn coverage_is_exact(height in 1usize..3000, lines in 1usize..100) {
            let q = ChunkQueue::build(height, lines).unwrap();
            proptest::prop_assert_eq!(q.len(), height.div_ceil(lines));
            let mut next = 0;
            for (i, c) in q.chunks().iter().enumerate() {
                proptest::prop_assert_eq!(c.start_row, next);
                if i + 1 < q.len() {
                    proptest::prop_assert_eq!(c.row_count, lines);
                }
                next += c.row_count;
            }
            proptest::prop_assert_eq!(next, height);
        }
    }
}
