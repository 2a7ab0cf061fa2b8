from .protocol import run

run()
