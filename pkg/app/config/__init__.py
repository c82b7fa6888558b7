# config/__init__.py

# Configuración del servicio (settings.py) y de las ejecuciones del pipeline (pipeline.py).
