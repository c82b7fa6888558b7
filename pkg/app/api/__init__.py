# api/__init__.py

# Servicio HTTP de verificación: dependencias comunes y endpoints.
