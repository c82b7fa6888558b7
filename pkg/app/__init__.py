# app/__init__.py

# Paquete principal de CrossPulse: autenticación entre dispositivos mediante
# señales PPG simultáneas. La CLI vive en app.cli y el servicio HTTP en app.main.
