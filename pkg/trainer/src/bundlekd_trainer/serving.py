"""OpenAI-compatible serving of a fine-tuned adapter.

POST /v1/chat/completions accepts {"model", "messages", "temperature",
"max_tokens"} and answers with choices[0].message.content plus usage, the
exact wire shape the bundlekd gateway targets, so the primary pipeline can
evaluate a served student with zero code changes. GET /health is the
liveness probe. Requests naming a model other than the served one get 404.
"""

from __future__ import annotations

import threading
import time

import torch
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .tokenizer import strip_end_marker
from .training import load_adapter


class ChatRequest(BaseModel):
    model: str
    messages: list[dict]
    temperature: float = 0.0
    max_tokens: int = 256


def build_app(adapter_dir: str) -> FastAPI:
    model, tok, cfg = load_adapter(adapter_dir)
    app = FastAPI(title="bundlekd student")
    lock = threading.Lock()  # one generation at a time on the shared model

    @app.get("/health")
    def health():
        return {"status": "ok", "model": cfg.served_model_name}

    @app.post("/v1/chat/completions")
    def chat(req: ChatRequest):
        if req.model != cfg.served_model_name:
            return JSONResponse(status_code=404, content={
                "error": {"message": f"model {req.model!r} not found; "
                                     f"serving {cfg.served_model_name!r}",
                          "type": "invalid_request_error"}})
        prompt = tok.render_chat(req.messages, add_generation_prompt=True)
        input_ids = torch.tensor([tok.encode(prompt)[-cfg.max_length:]],
                                 dtype=torch.long)
        max_new = max(1, min(req.max_tokens, cfg.max_length - input_ids.shape[1]))
        do_sample = req.temperature > 0
        with lock, torch.no_grad():
            out = model.generate(
                input_ids,
                max_new_tokens=max_new,
                do_sample=do_sample,
                temperature=req.temperature if do_sample else None,
                pad_token_id=tok.pad_id,
            )
        reply_ids = out[0][input_ids.shape[1]:]
        content = strip_end_marker(tok.decode(reply_ids))
        return {
            "id": f"chatcmpl-{int(time.time() * 1000)}",
            "object": "chat.completion",
            "model": cfg.served_model_name,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": int(input_ids.shape[1]),
                "completion_tokens": int(reply_ids.shape[0]),
                "total_tokens": int(input_ids.shape[1] + reply_ids.shape[0]),
            },
        }

    return app


def serve(adapter_dir: str, port: int, host: str = "127.0.0.1") -> None:
    import uvicorn
    uvicorn.run(build_app(adapter_dir), host=host, port=port, log_level="warning")
