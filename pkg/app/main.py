from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import logging
from routes import mixture, reports

import uvicorn

# ロギングの設定
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# FastAPIアプリケーションの初期化
app = FastAPI(
    title="Multi-task Mixture Engine",
    description="Mixture weights, curriculum plans and qualified-task accounting for multi-task fine-tuning",
    version="1.0.0"
)

# CORSミドルウェアの設定
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ルートの登録
app.include_router(mixture.router, prefix="/api/v1/mixture")
app.include_router(reports.router, prefix="/api/v1/reports")


# ヘルスチェックエンドポイント
@app.get("/health")
async def health_check():
    return {"status": "healthy"}


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=7783,
    )
