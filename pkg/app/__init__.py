# Dipolar droplet simulation and optimal control
