# api/endpoints/__init__.py

# Rutas de la API; main.py incluye el router de verification.
