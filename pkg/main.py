from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from Routers.experiment import router as experiment_router
from Services.config import configure_logging

configure_logging()

app = FastAPI(title="Fair Semi-Supervised Learning Experiments")
app.include_router(experiment_router)

# Allow local notebooks / dashboards to call the API
app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:8888", "http://127.0.0.1:8888", "*"],  # '*' for development only
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health")
def health():
    return {"status": "ok"}
