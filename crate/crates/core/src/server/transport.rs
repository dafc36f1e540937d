use axum::extract::ws::{Message, WebSocket};
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt, Lines};

/// A bidirectional text-message channel. `recv` must be cancel-safe: the
/// real-time loop races it against the tick timer.
pub trait Transport: Send {
    /// Next text message; `None` once the peer has gone away.
    fn recv(&mut self) -> impl std::future::Future<Output = Option<String>> + Send;
    fn send(&mut self, text: String) -> impl std::future::Future<Output = std::io::Result<()>> + Send;
}

/// Newline-delimited JSON over a byte stream.
pub struct Ndjson<R, W> {
    lines: Lines<R>,
    writer: W,
}

impl<R: AsyncBufRead + Unpin, W: AsyncWrite + Unpin> Ndjson<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { lines: reader.lines(), writer }
    }
}

impl<R, W> Transport for Ndjson<R, W>
where
    R: AsyncBufRead + Unpin + Send,
    W: AsyncWrite + Unpin + Send,
{
    async fn recv(&mut self) -> Option<String> {
        loop {
            match self.lines.next_line().await {
                Ok(Some(line)) if line.trim().is_empty() => continue,
                Ok(Some(line)) => return Some(line),
                Ok(None) | Err(_) => return None,
            }
        }
    }

    async fn send(&mut self, text: String) -> std::io::Result<()> {
        self.writer.write_all(text.as_bytes()).await?;
        self.writer.write_all(b"\n").await?;
        self.writer.flush().await
    }
}

/// Text frames over a WebSocket.
pub struct Ws(pub WebSocket);

impl Transport for Ws {
    async fn recv(&mut self) -> Option<String> {
        loop {
            match self.0.recv().await? {
                Ok(Message::Text(t)) => return Some(t.to_string()),
                Ok(Message::Binary(b)) => return Some(String::from_utf8_lossy(&b).into_owned()),
                Ok(Message::Close(_)) | Err(_) => return None,
                Ok(_) => continue,
            }
        }
    }

    async fn send(&mut self, text: String) -> std::io::Result<()> {
        self.0.send(Message::Text(text.into())).await.map_err(std::io::Error::other)
    }
}
