"""
HTTP Service Module

FastAPI application exposing the simulator, the pipeline and the trajectory
evaluation. Launched by `main.py serve`.

Author: LunaLynx12
"""

from routes import simulation_route as simulation_routes
from routes import evaluation_route as evaluation_routes
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import RedirectResponse
from fastapi import FastAPI

app = FastAPI(title="semloop", description="Object-level semantic mapping with scene-graph loop closure")
"""
FastAPI application instance.

Registers the simulation and evaluation routers.
"""
app.include_router(simulation_routes.router)
app.include_router(evaluation_routes.router)


app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

@app.get("/", include_in_schema=False)
async def index():
    """
    Root endpoint that redirects users to the API documentation page.

    return: RedirectResponse to /docs
    """
    return RedirectResponse(url="/docs")
